#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mslm/corpus.hpp"
#include "mslm/recurrent.hpp"
#include "mslm/trainer.hpp"

namespace mslm::cli {

struct DataConfig {
    std::string train;  // required
    std::string valid;  // empty: carve valid/test out of train by `split`
    std::string test;
    std::size_t limit_bytes = 0;  // 0 keeps whole files
    std::array<double, 3> split{0.9, 0.05, 0.05};
    Granularity granularity = Granularity::character;
    std::size_t min_count = 1;
    std::string closed_vocab;  // word list file; empty disables

    bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
    std::string name;
    DataConfig data;
    /// vocab_size 0 means "from the data"; cutoffs list the cluster boundaries
    /// below the vocabulary size, which is appended once known.
    ModelConfig model;
    TrainerConfig trainer;
    std::size_t batch = 16;
    std::size_t eval_batch = 10;
    std::size_t eval_bptt = 0;  // 0: use the training base length
    std::uint64_t seed = 1;
    std::string output_dir;  // empty: <output root>/<name>-<seed>

    bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataConfig& d);
void from_json(const nlohmann::json& j, DataConfig& d);
void to_json(nlohmann::json& j, const RunConfig& r);
void from_json(const nlohmann::json& j, RunConfig& r);

std::vector<std::string> preset_names();
/// UsageError for an unknown name.
RunConfig preset(const std::string& name);

/// Layers `patch` (a partial RunConfig in JSON) over `base`. UsageError on
/// malformed input.
RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& patch);

nlohmann::json read_config_json(const std::string& path);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

/// The model for a vocabulary of `vocab_size`: interior cutoffs at or above the
/// vocabulary are dropped and the vocabulary size closes the list.
ModelConfig resolve_model(const RunConfig& config, std::size_t vocab_size);

/// MSLM_OUTPUT_ROOT when set, otherwise "runs".
std::string default_output_root();
std::string run_directory(const RunConfig& config);

}  // namespace mslm::cli
