#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mslm/corpus.hpp"
#include "mslm/model.hpp"

namespace mslm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Bias-corrected Adam. Moments are keyed by parameter name and created on first use.
class Adam {
public:
    struct Moments {
        Tensor m;
        Tensor v;
    };

    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Raises DomainError for lr <= 0. Gradients are left as they are.
    void step(std::span<Parameter* const> params, double lr);

    std::uint64_t steps() const noexcept { return steps_; }
    const AdamConfig& config() const noexcept { return config_; }
    const std::map<std::string, Moments>& moments() const noexcept { return moments_; }

    void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

private:
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

void adam_step(std::span<Parameter* const> params, Adam& state, double lr);

/// Step decay: lr(epoch) = lr0 / factor^(number of reduction epochs <= epoch). Epochs count from 1.
struct Schedule {
    double lr0 = 2e-3;
    std::size_t epochs = 1;
    std::vector<std::size_t> reductions;
    double factor = 10.0;

    double lr(std::size_t epoch) const;
    bool operator==(const Schedule&) const = default;
};

struct RegConfig {
    double ar_alpha = 0.0;
    double tar_beta = 0.0;
    double weight_decay = 0.0;
    double clip_norm = 0.25;  // 0 disables clipping

    void validate() const;
    bool operator==(const RegConfig&) const = default;
};

/// loss + alpha*mean(dropped^2) + beta*mean((raw_t - raw_{t-1})^2) + lambda*sum ||W||^2.
/// Rows are time-major with `batch` rows per step. Zero coefficients add nothing.
Var apply_regularizers(const Var& loss, const Var& raw, const Var& dropped, std::size_t batch,
                       std::span<Parameter* const> params, const RegConfig& config);

/// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the factor used.
double clip_gradients(std::span<Parameter* const> params, double max_norm);

double gradient_norm(std::span<Parameter* const> params);

struct TrainerConfig {
    Schedule schedule;
    RegConfig reg;
    WindowSchedule window;
    AdamConfig adam;

    bool operator==(const TrainerConfig&) const = default;
};

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0.0;
    double mean_nats = 0.0;  // token-weighted, regularizers excluded
    std::size_t windows = 0;
    std::size_t tokens = 0;
    double seconds = 0.0;
    std::vector<double> window_losses;
};

/// Owns everything needed to continue training bit-identically: optimizer,
/// dropout generator, stream position and carried recurrent state.
class Trainer {
public:
    Trainer(LanguageModel& model, TrainerConfig config, std::uint64_t seed);

    struct Position {
        std::size_t epoch = 1;        // epoch currently in progress
        std::size_t window = 0;       // windows completed in this epoch
        WindowCursor cursor;
        std::size_t tokens = 0;       // targets seen in this epoch
        double nats_sum = 0.0;        // summed target nats in this epoch
        std::vector<double> window_losses;
    };

    /// Trains on one window. Returns false (and leaves the position untouched)
    /// once the epoch's stream is exhausted. Non-finite loss or gradient raises
    /// DivergenceError before any parameter changes.
    bool train_window(const BatchStream& stream);

    /// Finishes the current epoch (possibly resumed mid-way) and moves to the next.
    EpochStats train_epoch(const BatchStream& stream);

    /// Optional hook run after every completed window.
    std::function<void(const Trainer&)> on_window;

    LanguageModel& model() noexcept { return model_; }
    const TrainerConfig& config() const noexcept { return config_; }
    const Position& position() const noexcept { return position_; }
    const Adam& optimizer() const noexcept { return adam_; }
    const Rng& rng() const noexcept { return rng_; }
    const RecurrentState& hidden() const noexcept { return hidden_; }
    double current_lr() const { return config_.schedule.lr(position_.epoch); }

    void restore(Position position, Rng rng, RecurrentState hidden, Adam adam);

private:
    LanguageModel& model_;
    TrainerConfig config_;
    Adam adam_;
    Rng rng_;
    Position position_;
    RecurrentState hidden_;
    double epoch_seconds_ = 0.0;
};

struct EvalResult {
    Metrics metrics;
    std::size_t tokens = 0;
    /// Per-target natural-log probabilities in stream order (column by column),
    /// filled when requested.
    std::vector<double> log_probs;
};

/// Mask-free pass over the whole stream with fixed windows and state carried
/// across them; every target scored exactly once.
EvalResult evaluate(LanguageModel& model, const BatchStream& stream, std::size_t bptt, bool keep_log_probs = false);

}  // namespace mslm
