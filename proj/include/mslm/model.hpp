#pragma once

#include <cstdint>
#include <vector>

#include "mslm/adaptive_softmax.hpp"
#include "mslm/recurrent.hpp"

namespace mslm {

/// Stacked RNN plus the weight-tied adaptive softmax reading the same embedding.
class LanguageModel {
public:
    LanguageModel(const ModelConfig& config, std::uint64_t seed);
    LanguageModel(const LanguageModel&) = delete;
    LanguageModel& operator=(const LanguageModel&) = delete;

    struct WindowOutput {
        Var loss;       // mean negative log-likelihood (nats) over the window
        Var log_probs;  // [steps*batch] per-target log-probabilities
        Var output;     // dropped final-layer activations
        Var raw;        // undropped final-layer activations
        RecurrentState state;
        std::size_t logits_computed = 0;
    };

    WindowOutput forward(Tape& tape, const TokenGrid& inputs, const TokenGrid& targets, const RecurrentState& state,
                         const ForwardMode& mode);

    RecurrentState initial_state(std::size_t batch) const { return rnn_.initial_state(batch); }

    /// Every trainable parameter exactly once, in a fixed order.
    std::vector<Parameter*> parameters();
    std::size_t parameter_count();

    const ModelConfig& config() const noexcept { return rnn_.config(); }
    StackedRNN& rnn() noexcept { return rnn_; }
    AdaptiveSoftmax& softmax() noexcept { return softmax_; }
    const Parameter& embedding() const noexcept { return rnn_.embedding(); }
    Parameter& embedding() noexcept { return rnn_.embedding(); }

    /// The matrix whose rows the softmax scores against.
    const Tensor& softmax_targets() const noexcept { return rnn_.embedding().value; }

private:
    StackedRNN rnn_;
    AdaptiveSoftmax softmax_;
};

struct TyingReport {
    bool shared_storage = false;
    std::size_t tied_parameters = 0;
    std::size_t untied_parameters = 0;  // tied + V*e
};

TyingReport tying_audit(LanguageModel& model);

/// Parameter count computed from the configuration alone (no allocation).
std::size_t count_parameters(const ModelConfig& config);

}  // namespace mslm
