#include "mslm/model.hpp"

#include "mslm/error.hpp"

namespace mslm {

LanguageModel::LanguageModel(const ModelConfig& config, std::uint64_t seed)
    : rnn_(config, Rng(seed)),
      softmax_(ClusterPlan(config.vocab_size, config.cutoffs), config.embedding_size, Rng(derive_seed(seed, 1))) {}

LanguageModel::WindowOutput LanguageModel::forward(Tape& tape, const TokenGrid& inputs, const TokenGrid& targets,
                                                   const RecurrentState& state, const ForwardMode& mode) {
    if (inputs.steps != targets.steps || inputs.batch != targets.batch) {
        throw DimensionError("forward: inputs and targets differ in shape");
    }
    auto rnn_out = rnn_.forward(tape, inputs, state, mode);
    auto scored = softmax_.log_prob(tape, rnn_out.output, targets.ids, tape.param(rnn_.embedding()));
    WindowOutput out;
    out.loss = ops::scale(ops::mean(scored.log_probs), -1.0);
    out.log_probs = scored.log_probs;
    out.output = rnn_out.output;
    out.raw = rnn_out.raw;
    out.state = std::move(rnn_out.state);
    out.logits_computed = scored.logits_computed;
    return out;
}

std::vector<Parameter*> LanguageModel::parameters() {
    auto params = rnn_.parameters();
    for (auto* p : softmax_.parameters()) params.push_back(p);
    return params;
}

std::size_t LanguageModel::parameter_count() {
    std::size_t total = 0;
    for (auto* p : parameters()) total += p->value.size();
    return total;
}

TyingReport tying_audit(LanguageModel& model) {
    TyingReport report;
    report.shared_storage = &model.softmax_targets() == &model.embedding().value;
    report.tied_parameters = model.parameter_count();
    report.untied_parameters = report.tied_parameters + model.embedding().value.size();
    return report;
}

std::size_t count_parameters(const ModelConfig& config) {
    validate(config);
    const std::size_t vocab = config.vocab_size;
    const std::size_t e = config.embedding_size;
    std::size_t total = vocab * e;
    for (std::size_t i = 0; i < config.layers; ++i) {
        const std::size_t in = layer_input_size(config, i);
        const std::size_t out = layer_output_size(config, i);
        if (config.cell == CellType::lstm) {
            total += 4 * out * in + 4 * out * out + 4 * out;
        } else {
            total += 3 * out * qrnn_window(i) * in + 3 * out;
        }
    }
    const ClusterPlan plan(vocab, config.cutoffs);
    const std::size_t k = plan.num_clusters();
    return total + vocab + k * e + k;
}

}  // namespace mslm
