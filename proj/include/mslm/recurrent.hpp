#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mslm/autograd.hpp"
#include "mslm/tokens.hpp"

namespace mslm {

enum class CellType { lstm, qrnn };

std::string to_string(CellType cell);
CellType parse_cell_type(std::string_view name);

/// Drop probabilities in "e/h/i/o" order: embedding rows, between
/// recurrent layers, on the embedded input, on the final output.
struct DropoutRates {
    double embedding = 0.0;
    double hidden = 0.0;
    double input = 0.0;
    double output = 0.0;
    double weight = 0.0;  // DropConnect on recurrent weights

    bool operator==(const DropoutRates&) const = default;
};

struct LayerState {
    Tensor h;  // [batch x output_size]
    Tensor c;  // [batch x output_size]
};

/// One entry per layer. Carried across truncated-BPTT windows as plain values,
/// so no gradient crosses a window boundary.
using RecurrentState = std::vector<LayerState>;

struct ForwardMode {
    bool training = false;
    Rng* rng = nullptr;  // required when training with any nonzero rate
};

class RecurrentLayer {
public:
    struct Output {
        Var hidden;       // [steps*batch x output_size]
        LayerState last;  // detached final state
    };

    RecurrentLayer(std::size_t input_size, std::size_t output_size)
        : input_size_(input_size), output_size_(output_size) {}
    virtual ~RecurrentLayer() = default;

    virtual CellType cell() const = 0;
    virtual std::vector<Parameter*> parameters() = 0;

    /// Runs a whole window. x is time-major [steps*batch x input_size].
    /// weight_drop > 0 (with rng) samples one DropConnect mask for the window.
    virtual Output forward(Tape& tape, const Var& x, std::size_t batch, const LayerState& state,
                           double weight_drop, Rng* rng) = 0;

    std::size_t input_size() const noexcept { return input_size_; }
    std::size_t output_size() const noexcept { return output_size_; }
    LayerState zero_state(std::size_t batch) const;

protected:
    void check_input(const Var& x, std::size_t batch, const LayerState& state) const;

    std::size_t input_size_;
    std::size_t output_size_;
};

/// Standard LSTM without peepholes; gate blocks ordered (i, f, g, o).
class LSTMLayer final : public RecurrentLayer {
public:
    LSTMLayer(std::string prefix, std::size_t input_size, std::size_t output_size, Rng& rng);

    CellType cell() const override { return CellType::lstm; }
    std::vector<Parameter*> parameters() override { return {&w_ih, &w_hh, &bias}; }
    Output forward(Tape& tape, const Var& x, std::size_t batch, const LayerState& state, double weight_drop,
                   Rng* rng) override;

    struct StepResult {
        Var h;
        Var c;
    };
    /// Single timestep: gates = x W_ih^T + h W_hh^T + b; c' = f*c + i*g; h' = o*tanh(c').
    StepResult step(Tape& tape, const Var& x, const Var& h, const Var& c);

    Parameter w_ih;  // [4h x in]
    Parameter w_hh;  // [4h x h]
    Parameter bias;  // [4h]
};

/// Quasi-recurrent layer: convolutional gates over a window of `window` inputs
/// computed for all timesteps in one matrix product, then fo-pooling.
class QRNNLayer final : public RecurrentLayer {
public:
    QRNNLayer(std::string prefix, std::size_t input_size, std::size_t output_size, std::size_t window, Rng& rng);

    CellType cell() const override { return CellType::qrnn; }
    std::vector<Parameter*> parameters() override { return {&weight, &bias}; }
    Output forward(Tape& tape, const Var& x, std::size_t batch, const LayerState& state, double weight_drop,
                   Rng* rng) override;

    std::size_t window() const noexcept { return window_; }

    Parameter weight;  // [3h x window*in], row blocks (z, f, o); columns [x_{t-1} | x_t]
    Parameter bias;    // [3h]

private:
    std::size_t window_;
};

/// DropConnect: zeroes each entry w.p. drop_prob, scales survivors by 1/(1-drop_prob).
Tensor weight_drop(const Tensor& w, double drop_prob, Rng& rng);

/// Locked dropout: one [batch x d] mask applied at every timestep of x [steps*batch x d].
Tensor variational_dropout(const Tensor& x, std::size_t batch, double keep_prob, Rng& rng);
Var variational_dropout(const Var& x, std::size_t batch, double keep_prob, Rng& rng);

/// Per-word scaling factors (0 or 1/keep_prob) for embedding dropout.
std::vector<double> sample_row_mask(std::size_t rows, double keep_prob, Rng& rng);
/// Zeroes whole rows of the embedding w.p. 1-keep_prob, scales the rest.
Tensor embedding_dropout(const Tensor& embedding, double keep_prob, Rng& rng);

struct ModelConfig {
    CellType cell = CellType::lstm;
    std::size_t vocab_size = 0;
    std::size_t layers = 1;
    std::size_t hidden_size = 0;
    std::size_t embedding_size = 0;
    DropoutRates dropout;
    std::vector<std::size_t> cutoffs;  // adaptive softmax; empty means one full softmax

    bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

/// Embedding -> stacked recurrent layers. Layer sizes chain e -> h -> ... -> h -> e
/// so the final output can be scored against the (tied) embedding matrix.
class StackedRNN {
public:
    StackedRNN(const ModelConfig& config, Rng init_rng);

    struct Output {
        Var output;  // final layer after output dropout, [steps*batch x e]
        Var raw;     // final layer before output dropout
        RecurrentState state;
    };

    Output forward(Tape& tape, const TokenGrid& tokens, const RecurrentState& state, const ForwardMode& mode);

    RecurrentState initial_state(std::size_t batch) const;
    std::vector<Parameter*> parameters();
    Parameter& embedding() noexcept { return embedding_; }
    const Parameter& embedding() const noexcept { return embedding_; }
    RecurrentLayer& layer(std::size_t i) { return *layers_.at(i); }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    const ModelConfig& config() const noexcept { return config_; }

private:
    ModelConfig config_;
    Parameter embedding_;
    std::vector<std::unique_ptr<RecurrentLayer>> layers_;
};

/// Recurrent layer sizes for layer i of a stack.
std::size_t layer_input_size(const ModelConfig& config, std::size_t i);
std::size_t layer_output_size(const ModelConfig& config, std::size_t i);
/// QRNN convolution width: two inputs on the first layer, one above it.
std::size_t qrnn_window(std::size_t layer_index);

}  // namespace mslm
