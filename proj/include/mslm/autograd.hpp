#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mslm/tensor.hpp"

namespace mslm {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Ordered record of differentiable operations. Backward replays the record in
/// exact reverse order and may run only once per tape.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf bound to a Parameter. The parameter's value is read in place and its
    /// accumulated gradient is added to Parameter::grad once, at the end of backward.
    /// Repeated calls for the same parameter return the same leaf.
    Var param(Parameter& p);
    /// Differentiable leaf owned by the tape (gradient readable through grad()).
    Var input(Tensor value);
    Var constant(Tensor value);

    /// Records an op result. `backward` is dropped when no input requires grad.
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

    const Tensor& value(const Var& v) const;
    /// Gradient of the last backward pass w.r.t. v (zeros if nothing flowed).
    const Tensor& grad(const Var& v);
    bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

    /// Gradient accumulator for a node, allocated on first use; nullptr when the
    /// node does not require a gradient.
    Tensor* grad_sink(const Var& v);

    void backward(const Var& loss);
    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Ids visited by the last backward pass, in visiting order.
    const std::vector<std::size_t>& backward_order() const noexcept { return visited_; }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        Tensor* flush_to = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_leaves_;
    std::vector<std::size_t> visited_;
    bool consumed_ = false;
};

/// Accumulates d(loss)/d(param) into every reachable Parameter::grad.
void backward(Tape& tape, const Var& loss);

namespace ops {

Var matmul(const Var& a, const Var& b);     // [m x k] * [k x n]
Var matmul_nt(const Var& a, const Var& b);  // [m x k] * [n x k]^T

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var square(const Var& x);
Var scale(const Var& x, double factor);

/// x[N x n] + bias[n] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
/// Multiplies row r of x by factors[r].
Var scale_rows(const Var& x, std::vector<double> factors);

Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]

Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
/// Moves rows down by `offset`, filling the vacated leading rows with zeros.
Var shift_rows(const Var& x, std::size_t offset);
Var reshape(const Var& x, Shape shape);

Var gather_rows(const Var& table, std::vector<std::size_t> ids);
/// Row-wise log-softmax with max subtraction.
Var log_softmax_rows(const Var& x);
/// out[r] = x[r, cols[r]].
Var pick(const Var& x, std::vector<std::size_t> cols);
/// out has length n; out[index[i]] += values[i].
Var scatter(const Var& values, std::vector<std::size_t> index, std::size_t n);

/// fo-pooling over time-major rows (row t*batch + b):
///   c_t = f_t * c_{t-1} + (1 - f_t) * z_t.
/// Returns every c_t as a [T*batch x h] matrix.
Var fo_pool(const Var& forget, const Var& candidate, const Var& c0);

/// LSTM memory update from pre-activation gates laid out as [i | f | g | o]:
///   c' = sigmoid(f) * c + sigmoid(i) * tanh(g).
Var lstm_memory(const Var& gates, const Var& c_prev);
/// LSTM output: h' = sigmoid(o) * tanh(c').
Var lstm_output(const Var& gates, const Var& c_next);

}  // namespace ops

/// Numerically stable softmax of a single row.
Tensor softmax_row(const Tensor& logits);
Tensor log_softmax_row(const Tensor& logits);

double sigmoid(double x);

}  // namespace mslm
