#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "mslm/corpus.hpp"
#include "mslm/model.hpp"
#include "mslm/trainer.hpp"

namespace mslm {

// JSON forms of the configuration types. from_json validates enumerations and
// raises FormatError on malformed input.
void to_json(nlohmann::json& j, const DropoutRates& d);
void from_json(const nlohmann::json& j, DropoutRates& d);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);
void to_json(nlohmann::json& j, const RegConfig& r);
void from_json(const nlohmann::json& j, RegConfig& r);
void to_json(nlohmann::json& j, const WindowSchedule& w);
void from_json(const nlohmann::json& j, WindowSchedule& w);
void to_json(nlohmann::json& j, const AdamConfig& a);
void from_json(const nlohmann::json& j, AdamConfig& a);
void to_json(nlohmann::json& j, const TrainerConfig& t);
void from_json(const nlohmann::json& j, TrainerConfig& t);

nlohmann::json vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: "MSLM", u32 version, u64 header length, JSON header, u64
/// tensor count, then per tensor: u32 name length, name, u32 rank, u64 extents,
/// f64 values. Integers and doubles are little-endian.
struct Checkpoint {
    ModelConfig model;
    std::optional<Vocabulary> vocab;
    std::optional<TrainerConfig> trainer_config;
    nlohmann::json trainer_state;  // null when saved without a trainer
    nlohmann::json extra;          // caller-defined (run configuration)
    std::map<std::string, Tensor> tensors;
};

/// Snapshot of the model (and optionally the trainer mid-epoch). Written to a
/// temporary file and renamed, so readers never see a partial checkpoint.
void save_checkpoint(const std::string& path, LanguageModel& model, const Vocabulary* vocab, const Trainer* trainer,
                     const nlohmann::json& extra = nullptr);

/// Reads and validates the whole file before returning. FormatError on bad
/// magic, version or truncation.
Checkpoint read_checkpoint(const std::string& path);

/// Fresh model carrying the checkpoint's parameters. CompatibilityError when a
/// stored tensor is missing or has the wrong shape.
std::unique_ptr<LanguageModel> restore_model(const Checkpoint& ckpt);

/// Loads optimizer moments, generator, stream position and recurrent state.
void restore_trainer(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace mslm
