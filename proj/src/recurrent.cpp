#include "mslm/recurrent.hpp"

#include <cmath>

#include "mslm/error.hpp"

namespace mslm {

std::string to_string(CellType cell) { return cell == CellType::lstm ? "lstm" : "qrnn"; }

CellType parse_cell_type(std::string_view name) {
    if (name == "lstm" || name == "LSTM") return CellType::lstm;
    if (name == "qrnn" || name == "QRNN") return CellType::qrnn;
    throw UsageError("unknown cell type '" + std::string(name) + "'");
}

namespace {

void require_probability(const char* what, double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError(std::string(what) + " must lie in [0,1], got " + std::to_string(p));
    }
}

Tensor init_uniform(const Shape& shape, double bound, Rng& rng) { return uniform_tensor(shape, -bound, bound, rng); }

// Applies DropConnect to a recurrent weight leaf for one window.
Var maybe_weight_drop(Tape& tape, Parameter& w, double drop_prob, Rng* rng) {
    require_probability("weight drop", drop_prob);
    Var leaf = tape.param(w);
    if (drop_prob == 0.0) return leaf;
    if (!rng) throw ContractError("weight drop requires a random generator");
    return ops::mul(leaf, tape.constant(bernoulli_mask(w.value.shape(), 1.0 - drop_prob, *rng)));
}

}  // namespace

LayerState RecurrentLayer::zero_state(std::size_t batch) const {
    return {Tensor({batch, output_size_}), Tensor({batch, output_size_})};
}

void RecurrentLayer::check_input(const Var& x, std::size_t batch, const LayerState& state) const {
    const Tensor& xv = x.value();
    if (batch == 0 || xv.rank() != 2 || xv.rows() % batch != 0) {
        throw DimensionError("recurrent layer: input " + to_string(xv.shape()) + " is not a whole number of " +
                             std::to_string(batch) + "-row timesteps");
    }
    if (xv.cols() != input_size_) {
        throw DimensionError("recurrent layer: input " + to_string(xv.shape()) + " expects " +
                             std::to_string(input_size_) + " features");
    }
    const Shape expected{batch, output_size_};
    if (state.h.shape() != expected || state.c.shape() != expected) {
        throw DimensionError("recurrent layer: state " + to_string(state.c.shape()) + " expected " +
                             to_string(expected));
    }
}

LSTMLayer::LSTMLayer(std::string prefix, std::size_t input_size, std::size_t output_size, Rng& rng)
    : RecurrentLayer(input_size, output_size) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(output_size));
    w_ih = Parameter(prefix + ".w_ih", init_uniform({4 * output_size, input_size}, bound, rng));
    w_hh = Parameter(prefix + ".w_hh", init_uniform({4 * output_size, output_size}, bound, rng));
    Tensor b({4 * output_size});
    for (std::size_t j = output_size; j < 2 * output_size; ++j) b[j] = 1.0;
    bias = Parameter(prefix + ".bias", std::move(b));
}

LSTMLayer::StepResult LSTMLayer::step(Tape& tape, const Var& x, const Var& h, const Var& c) {
    if (x.value().rank() != 2 || x.value().cols() != input_size_ || h.value().cols() != output_size_ ||
        x.value().rows() != h.value().rows()) {
        throw DimensionError("lstm_step: input " + to_string(x.shape()) + " / state " + to_string(h.shape()) +
                             " inconsistent with layer " + std::to_string(input_size_) + "->" +
                             std::to_string(output_size_));
    }
    const Var gates = ops::add(ops::add_bias(ops::matmul_nt(x, tape.param(w_ih)), tape.param(bias)),
                               ops::matmul_nt(h, tape.param(w_hh)));
    const Var c_next = ops::lstm_memory(gates, c);
    return {ops::lstm_output(gates, c_next), c_next};
}

RecurrentLayer::Output LSTMLayer::forward(Tape& tape, const Var& x, std::size_t batch, const LayerState& state,
                                          double weight_drop_prob, Rng* rng) {
    check_input(x, batch, state);
    const std::size_t steps = x.value().rows() / batch;
    // Input contributions for every timestep in one product; only h W_hh^T is sequential.
    const Var projected = ops::add_bias(ops::matmul_nt(x, tape.param(w_ih)), tape.param(bias));
    const Var recurrent = maybe_weight_drop(tape, w_hh, weight_drop_prob, rng);
    Var h = tape.constant(state.h);
    Var c = tape.constant(state.c);
    std::vector<Var> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const Var gates = ops::add(ops::slice_rows(projected, t * batch, (t + 1) * batch), ops::matmul_nt(h, recurrent));
        c = ops::lstm_memory(gates, c);
        h = ops::lstm_output(gates, c);
        outputs.push_back(h);
    }
    return {ops::concat_rows(outputs), {h.value(), c.value()}};
}

QRNNLayer::QRNNLayer(std::string prefix, std::size_t input_size, std::size_t output_size, std::size_t window,
                     Rng& rng)
    : RecurrentLayer(input_size, output_size), window_(window) {
    if (window != 1 && window != 2) throw DomainError("QRNN window must be 1 or 2");
    const double bound = 1.0 / std::sqrt(static_cast<double>(output_size));
    weight = Parameter(prefix + ".weight", init_uniform({3 * output_size, window * input_size}, bound, rng));
    bias = Parameter(prefix + ".bias", Tensor({3 * output_size}));
}

RecurrentLayer::Output QRNNLayer::forward(Tape& tape, const Var& x, std::size_t batch, const LayerState& state,
                                          double weight_drop_prob, Rng* rng) {
    check_input(x, batch, state);
    const std::size_t h = output_size_;
    // Window-2 convolution sees [x_{t-1} | x_t]; x_{-1} is zero at the window start.
    const Var conv_input = window_ == 2 ? ops::concat_cols(ops::shift_rows(x, batch), x) : x;
    const Var w = maybe_weight_drop(tape, weight, weight_drop_prob, rng);
    const Var gates = ops::add_bias(ops::matmul_nt(conv_input, w), tape.param(bias));
    const Var z = ops::tanh(ops::slice_cols(gates, 0, h));
    const Var f = ops::sigmoid(ops::slice_cols(gates, h, 2 * h));
    const Var o = ops::sigmoid(ops::slice_cols(gates, 2 * h, 3 * h));
    const Var cells = ops::fo_pool(f, z, tape.constant(state.c));
    const Var hidden = ops::mul(o, cells);

    const std::size_t rows = x.value().rows();
    const std::size_t tail = (rows - batch) * h;
    auto last_rows = [&](const Tensor& t) {
        return Tensor({batch, h}, std::vector<double>(t.raw() + tail, t.raw() + rows * h));
    };
    return {hidden, {last_rows(hidden.value()), last_rows(cells.value())}};
}

Tensor weight_drop(const Tensor& w, double drop_prob, Rng& rng) {
    require_probability("weight drop", drop_prob);
    if (drop_prob == 0.0) return w;
    Tensor out = w;
    const Tensor mask = bernoulli_mask(w.shape(), 1.0 - drop_prob, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

namespace {

Tensor tiled_mask(std::size_t rows, std::size_t batch, std::size_t cols, double keep_prob, Rng& rng) {
    const Tensor mask = bernoulli_mask({batch, cols}, keep_prob, rng);
    Tensor tiled({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(mask.raw() + (r % batch) * cols, cols, tiled.raw() + r * cols);
    }
    return tiled;
}

void check_time_major(const Tensor& x, std::size_t batch) {
    if (batch == 0 || x.rank() != 2 || x.rows() % batch != 0) {
        throw DimensionError("variational_dropout: " + to_string(x.shape()) + " is not time-major with batch " +
                             std::to_string(batch));
    }
}

}  // namespace

Tensor variational_dropout(const Tensor& x, std::size_t batch, double keep_prob, Rng& rng) {
    require_probability("variational dropout keep probability", keep_prob);
    check_time_major(x, batch);
    if (keep_prob == 1.0) return x;
    Tensor out = x;
    const Tensor mask = tiled_mask(x.rows(), batch, x.cols(), keep_prob, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

Var variational_dropout(const Var& x, std::size_t batch, double keep_prob, Rng& rng) {
    require_probability("variational dropout keep probability", keep_prob);
    check_time_major(x.value(), batch);
    if (keep_prob == 1.0) return x;
    return ops::mul(x, x.tape().constant(tiled_mask(x.value().rows(), batch, x.value().cols(), keep_prob, rng)));
}

std::vector<double> sample_row_mask(std::size_t rows, double keep_prob, Rng& rng) {
    const Tensor mask = bernoulli_mask({rows}, keep_prob, rng);
    return {mask.data().begin(), mask.data().end()};
}

Tensor embedding_dropout(const Tensor& embedding, double keep_prob, Rng& rng) {
    require_probability("embedding dropout keep probability", keep_prob);
    if (keep_prob == 1.0) return embedding;
    const std::vector<double> mask = sample_row_mask(embedding.rows(), keep_prob, rng);
    Tensor out = embedding;
    const std::size_t cols = embedding.cols();
    for (std::size_t r = 0; r < embedding.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= mask[r];
    }
    return out;
}

void validate(const ModelConfig& config) {
    if (config.vocab_size == 0) throw DomainError("model: vocabulary size must be positive");
    if (config.layers == 0) throw DomainError("model: at least one layer required");
    if (config.embedding_size == 0) throw DomainError("model: embedding size must be positive");
    if (config.layers > 1 && config.hidden_size == 0) throw DomainError("model: hidden size must be positive");
    const auto& d = config.dropout;
    for (double p : {d.embedding, d.hidden, d.input, d.output, d.weight}) require_probability("dropout rate", p);
}

std::size_t layer_input_size(const ModelConfig& config, std::size_t i) {
    return i == 0 ? config.embedding_size : config.hidden_size;
}

std::size_t layer_output_size(const ModelConfig& config, std::size_t i) {
    return i + 1 == config.layers ? config.embedding_size : config.hidden_size;
}

std::size_t qrnn_window(std::size_t layer_index) { return layer_index == 0 ? 2 : 1; }

StackedRNN::StackedRNN(const ModelConfig& config, Rng init_rng) : config_(config) {
    validate(config_);
    embedding_ = Parameter("embedding", init_uniform({config_.vocab_size, config_.embedding_size}, 0.1, init_rng));
    for (std::size_t i = 0; i < config_.layers; ++i) {
        const std::string prefix = "layer" + std::to_string(i);
        const std::size_t in = layer_input_size(config_, i);
        const std::size_t out = layer_output_size(config_, i);
        if (config_.cell == CellType::lstm) {
            layers_.push_back(std::make_unique<LSTMLayer>(prefix, in, out, init_rng));
        } else {
            layers_.push_back(std::make_unique<QRNNLayer>(prefix, in, out, qrnn_window(i), init_rng));
        }
    }
}

RecurrentState StackedRNN::initial_state(std::size_t batch) const {
    RecurrentState state;
    for (const auto& layer : layers_) state.push_back(layer->zero_state(batch));
    return state;
}

std::vector<Parameter*> StackedRNN::parameters() {
    std::vector<Parameter*> out{&embedding_};
    for (auto& layer : layers_) {
        for (auto* p : layer->parameters()) out.push_back(p);
    }
    return out;
}

StackedRNN::Output StackedRNN::forward(Tape& tape, const TokenGrid& tokens, const RecurrentState& state,
                                       const ForwardMode& mode) {
    if (tokens.steps == 0 || tokens.batch == 0) throw ContractError("forward: empty token window");
    if (tokens.ids.size() != tokens.steps * tokens.batch) throw DimensionError("forward: token grid size mismatch");
    if (state.size() != layers_.size()) {
        throw DimensionError("forward: state has " + std::to_string(state.size()) + " layers, model has " +
                             std::to_string(layers_.size()));
    }
    std::vector<std::size_t> ids(tokens.ids.begin(), tokens.ids.end());
    for (auto id : ids) {
        if (id >= config_.vocab_size) {
            throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(config_.vocab_size));
        }
    }
    const auto& rates = config_.dropout;
    const bool training = mode.training;
    auto rng = [&]() -> Rng& {
        if (!mode.rng) throw ContractError("training forward with dropout requires a random generator");
        return *mode.rng;
    };
    const std::size_t batch = tokens.batch;

    Var x = ops::gather_rows(tape.param(embedding_), ids);
    if (training && rates.embedding > 0.0) {
        const std::vector<double> keep = sample_row_mask(config_.vocab_size, 1.0 - rates.embedding, rng());
        std::vector<double> per_lookup(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) per_lookup[i] = keep[ids[i]];
        x = ops::scale_rows(x, std::move(per_lookup));
    }
    if (training && rates.input > 0.0) x = variational_dropout(x, batch, 1.0 - rates.input, rng());

    Output out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const double wdrop = training ? rates.weight : 0.0;
        auto result = layers_[i]->forward(tape, x, batch, state[i], wdrop, wdrop > 0.0 ? &rng() : nullptr);
        out.state.push_back(std::move(result.last));
        x = result.hidden;
        if (i + 1 < layers_.size() && training && rates.hidden > 0.0) {
            x = variational_dropout(x, batch, 1.0 - rates.hidden, rng());
        }
    }
    out.raw = x;
    out.output = training && rates.output > 0.0 ? variational_dropout(x, batch, 1.0 - rates.output, rng()) : x;
    return out;
}

}  // namespace mslm
