#include "mslm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mslm/error.hpp"

namespace mslm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;
using ConstArr = Eigen::Map<const Eigen::ArrayXd>;
using MutArr = Eigen::Map<Eigen::ArrayXd>;

ConstMat as_mat(const Tensor& t) { return ConstMat(t.raw(), t.rows(), t.cols()); }
MutMat as_mat(Tensor& t) { return MutMat(t.raw(), t.rows(), t.cols()); }
ConstArr as_arr(const Tensor& t) { return ConstArr(t.raw(), t.size()); }
MutArr as_arr(Tensor& t) { return MutArr(t.raw(), t.size()); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
    }
}

Tape& same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
    return a.tape();
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    if (auto it = param_leaves_.find(&p); it != param_leaves_.end()) return Var(this, it->second);
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    Node node;
    node.external = &p.value;
    node.flush_to = &p.grad;
    node.requires_grad = true;
    Var v = push(std::move(node));
    param_leaves_.emplace(&p, v.id());
    return v;
}

Var Tape::input(Tensor value) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = true;
    return push(std::move(node));
}

Var Tape::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const auto& in : inputs) {
        if (&in.tape() != this) throw ContractError("input recorded on a different tape");
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
}

const Tensor& Tape::value(const Var& v) const {
    const Node& n = nodes_.at(v.id());
    return n.external ? *n.external : n.value;
}

const Tensor& Tape::grad(const Var& v) {
    Node& n = nodes_.at(v.id());
    if (n.grad.empty()) n.grad = Tensor(value(v).shape());
    return n.grad;
}

Tensor* Tape::grad_sink(const Var& v) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(value(v).shape());
    return &n.grad;
}

void Tape::backward(const Var& loss) {
    if (consumed_) throw TapeReuseError("tape has already been consumed by a backward pass");
    if (&loss.tape() != this) throw ContractError("loss was not recorded on this tape");
    if (value(loss).size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + to_string(value(loss).shape()));
    }
    consumed_ = true;
    visited_.clear();
    if (!nodes_[loss.id()].requires_grad) return;
    grad_sink(loss)->fill(1.0);

    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        visited_.push_back(i);
        if (n.backward) {
            n.backward(*this, n.grad, n.external ? *n.external : n.value);
        }
        if (n.flush_to) {
            as_arr(*n.flush_to) += as_arr(n.grad);
        }
    }
}

void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

namespace ops {

Var matmul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2("matmul", av);
    require_rank2("matmul", bv);
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner extents disagree " + to_string(av.shape()) + " x " +
                             to_string(bv.shape()));
    }
    Tensor out({av.rows(), bv.cols()});
    as_mat(out).noalias() = as_mat(av) * as_mat(bv);
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_mat(*ga).noalias() += as_mat(g) * as_mat(b.value()).transpose();
        if (Tensor* gb = t.grad_sink(b)) as_mat(*gb).noalias() += as_mat(a.value()).transpose() * as_mat(g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2("matmul_nt", av);
    require_rank2("matmul_nt", bv);
    if (av.cols() != bv.cols()) {
        throw DimensionError("matmul_nt: inner extents disagree " + to_string(av.shape()) + " x " +
                             to_string(bv.shape()) + "^T");
    }
    Tensor out({av.rows(), bv.rows()});
    as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_mat(*ga).noalias() += as_mat(g) * as_mat(b.value());
        if (Tensor* gb = t.grad_sink(b)) as_mat(*gb).noalias() += as_mat(g).transpose() * as_mat(a.value());
    });
}

Var add(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    as_arr(out) += as_arr(b.value());
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_arr(*ga) += as_arr(g);
        if (Tensor* gb = t.grad_sink(b)) as_arr(*gb) += as_arr(g);
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    as_arr(out) -= as_arr(b.value());
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_arr(*ga) += as_arr(g);
        if (Tensor* gb = t.grad_sink(b)) as_arr(*gb) -= as_arr(g);
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    as_arr(out) *= as_arr(b.value());
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_arr(*ga) += as_arr(g) * as_arr(b.value());
        if (Tensor* gb = t.grad_sink(b)) as_arr(*gb) += as_arr(g) * as_arr(a.value());
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = mslm::sigmoid(v);
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x](Tape& t, const Tensor& g, const Tensor& y) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += as_arr(g) * as_arr(y) * (1.0 - as_arr(y));
    });
}

Var tanh(const Var& x) {
    Tensor out = x.value();
    as_arr(out) = as_arr(out).tanh();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x](Tape& t, const Tensor& g, const Tensor& y) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += as_arr(g) * (1.0 - as_arr(y).square());
    });
}

Var square(const Var& x) {
    Tensor out = x.value();
    as_arr(out) = as_arr(out).square();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += 2.0 * as_arr(g) * as_arr(x.value());
    });
}

Var scale(const Var& x, double factor) {
    Tensor out = x.value();
    as_arr(out) *= factor;
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, factor](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += factor * as_arr(g);
    });
}

Var add_bias(const Var& x, const Var& bias) {
    Tape& tape = same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_rank2("add_bias", xv);
    if (bv.rank() != 1 || bv.size() != xv.cols()) {
        throw DimensionError("add_bias: bias " + to_string(bv.shape()) + " does not match " + to_string(xv.shape()));
    }
    Tensor out = xv;
    as_mat(out).rowwise() += as_mat(bv).row(0);
    const Var in[] = {x, bias};
    return tape.record(std::move(out), in, [x, bias](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += as_arr(g);
        if (Tensor* gb = t.grad_sink(bias)) as_mat(*gb).row(0) += as_mat(g).colwise().sum();
    });
}

Var scale_rows(const Var& x, std::vector<double> factors) {
    const Tensor& xv = x.value();
    require_rank2("scale_rows", xv);
    if (factors.size() != xv.rows()) {
        throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " + to_string(xv.shape()));
    }
    Eigen::Map<const Eigen::VectorXd> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
    Tensor out = xv;
    as_mat(out).array().colwise() *= f.array();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, factors = std::move(factors)](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) {
            Eigen::Map<const Eigen::VectorXd> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
            as_mat(*gx).array() += as_mat(g).array().colwise() * f.array();
        }
    });
}

Var sum(const Var& x) {
    const Var in[] = {x};
    return x.tape().record(Tensor::scalar(x.value().sum()), in, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += g[0];
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    const Var in[] = {x};
    return x.tape().record(Tensor::scalar(x.value().sum() / n), in, [x, n](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += g[0] / n;
    });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
    const Tensor& xv = x.value();
    require_rank2("slice_rows", xv);
    if (begin >= end || end > xv.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                             to_string(xv.shape()));
    }
    const std::size_t cols = xv.cols();
    Tensor out({end - begin, cols},
               std::vector<double>(xv.raw() + begin * cols, xv.raw() + end * cols));
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, begin, cols](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) {
            MutArr(gx->raw() + begin * cols, static_cast<Eigen::Index>(g.size())) += as_arr(g);
        }
    });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
    const Tensor& xv = x.value();
    require_rank2("slice_cols", xv);
    if (begin >= end || end > xv.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                             to_string(xv.shape()));
    }
    const auto width = static_cast<Eigen::Index>(end - begin);
    const auto b = static_cast<Eigen::Index>(begin);
    Tensor out({xv.rows(), end - begin});
    as_mat(out) = as_mat(xv).middleCols(b, width);
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, b, width](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_mat(*gx).middleCols(b, width) += as_mat(g);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Tape& tape = parts.front().tape();
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_rank2("concat_rows", p.value());
        if (p.value().cols() != cols) {
            throw DimensionError("concat_rows: column mismatch " + to_string(parts.front().shape()) + " vs " +
                                 to_string(p.shape()));
        }
        rows += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(Tensor({rows, cols}, std::move(data)), parts,
                       [inputs](Tape& t, const Tensor& g, const Tensor&) {
                           std::size_t offset = 0;
                           for (const auto& p : inputs) {
                               const std::size_t n = p.value().size();
                               if (Tensor* gp = t.grad_sink(p)) {
                                   as_arr(*gp) += ConstArr(g.raw() + offset, static_cast<Eigen::Index>(n));
                               }
                               offset += n;
                           }
                       });
}

Var concat_cols(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2("concat_cols", av);
    require_rank2("concat_cols", bv);
    if (av.rows() != bv.rows()) {
        throw DimensionError("concat_cols: row mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
    }
    const auto ca = static_cast<Eigen::Index>(av.cols());
    const auto cb = static_cast<Eigen::Index>(bv.cols());
    Tensor out({av.rows(), av.cols() + bv.cols()});
    as_mat(out).leftCols(ca) = as_mat(av);
    as_mat(out).rightCols(cb) = as_mat(bv);
    const Var in[] = {a, b};
    return tape.record(std::move(out), in, [a, b, ca, cb](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* ga = t.grad_sink(a)) as_mat(*ga) += as_mat(g).leftCols(ca);
        if (Tensor* gb = t.grad_sink(b)) as_mat(*gb) += as_mat(g).rightCols(cb);
    });
}

Var shift_rows(const Var& x, std::size_t offset) {
    const Tensor& xv = x.value();
    require_rank2("shift_rows", xv);
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    Tensor out(xv.shape());
    if (offset < rows) {
        std::copy(xv.raw(), xv.raw() + (rows - offset) * cols, out.raw() + offset * cols);
    }
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, offset, rows, cols](Tape& t, const Tensor& g, const Tensor&) {
        if (offset >= rows) return;
        if (Tensor* gx = t.grad_sink(x)) {
            const auto n = static_cast<Eigen::Index>((rows - offset) * cols);
            MutArr(gx->raw(), n) += ConstArr(g.raw() + offset * cols, n);
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) as_arr(*gx) += as_arr(g);
    });
}

Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
    const Tensor& tv = table.value();
    require_rank2("gather_rows", tv);
    if (ids.empty()) throw DimensionError("gather_rows: empty id list");
    const std::size_t cols = tv.cols();
    Tensor out({ids.size(), cols});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= tv.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(ids[r]) + " out of " + to_string(tv.shape()));
        }
        std::copy_n(tv.raw() + ids[r] * cols, cols, out.raw() + r * cols);
    }
    const Var in[] = {table};
    return table.tape().record(std::move(out), in, [table, ids = std::move(ids), cols](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gt = t.grad_sink(table)) {
            for (std::size_t r = 0; r < ids.size(); ++r) {
                MutArr(gt->raw() + ids[r] * cols, static_cast<Eigen::Index>(cols)) +=
                    ConstArr(g.raw() + r * cols, static_cast<Eigen::Index>(cols));
            }
        }
    });
}

Var log_softmax_rows(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.empty()) throw DimensionError("log_softmax_rows: empty input");
    Tensor out = xv;
    auto m = as_mat(out);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
        m.row(r).array() -= lse;
    }
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x](Tape& t, const Tensor& g, const Tensor& y) {
        if (Tensor* gx = t.grad_sink(x)) {
            const auto gm = as_mat(g);
            const auto ym = as_mat(y);
            auto gxm = as_mat(*gx);
            for (Eigen::Index r = 0; r < gm.rows(); ++r) {
                const double total = gm.row(r).sum();
                gxm.row(r).array() += gm.row(r).array() - ym.row(r).array().exp() * total;
            }
        }
    });
}

Var pick(const Var& x, std::vector<std::size_t> cols) {
    const Tensor& xv = x.value();
    require_rank2("pick", xv);
    if (cols.size() != xv.rows()) {
        throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " + to_string(xv.shape()));
    }
    Tensor out({cols.size()});
    for (std::size_t r = 0; r < cols.size(); ++r) {
        if (cols[r] >= xv.cols()) throw DimensionError("pick: column " + std::to_string(cols[r]) + " out of range");
        out[r] = xv.at(r, cols[r]);
    }
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [x, cols = std::move(cols)](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gx = t.grad_sink(x)) {
            for (std::size_t r = 0; r < cols.size(); ++r) gx->at(r, cols[r]) += g[r];
        }
    });
}

Var scatter(const Var& values, std::vector<std::size_t> index, std::size_t n) {
    const Tensor& vv = values.value();
    if (index.size() != vv.size()) throw DimensionError("scatter: index/value length mismatch");
    Tensor out({n});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= n) throw DimensionError("scatter: index out of range");
        out[index[i]] += vv[i];
    }
    const Var in[] = {values};
    return values.tape().record(std::move(out), in, [values, index = std::move(index)](Tape& t, const Tensor& g, const Tensor&) {
        if (Tensor* gv = t.grad_sink(values)) {
            for (std::size_t i = 0; i < index.size(); ++i) (*gv)[i] += g[index[i]];
        }
    });
}

Var fo_pool(const Var& forget, const Var& candidate, const Var& c0) {
    Tape& tape = same_tape(forget, candidate);
    same_tape(forget, c0);
    const Tensor& fv = forget.value();
    const Tensor& zv = candidate.value();
    const Tensor& cv = c0.value();
    require_same_shape("fo_pool", fv, zv);
    require_rank2("fo_pool", fv);
    require_rank2("fo_pool", cv);
    if (cv.cols() != fv.cols() || fv.rows() % cv.rows() != 0) {
        throw DimensionError("fo_pool: initial state " + to_string(cv.shape()) + " incompatible with gates " +
                             to_string(fv.shape()));
    }
    const std::size_t width = cv.size();  // batch * hidden
    const std::size_t steps = fv.size() / width;
    Tensor out(fv.shape());
    const double* prev = cv.raw();
    for (std::size_t t = 0; t < steps; ++t) {
        const double* f = fv.raw() + t * width;
        const double* z = zv.raw() + t * width;
        double* c = out.raw() + t * width;
        for (std::size_t j = 0; j < width; ++j) c[j] = f[j] * prev[j] + (1.0 - f[j]) * z[j];
        prev = c;
    }
    const Var in[] = {forget, candidate, c0};
    return tape.record(std::move(out), in, [forget, candidate, c0, width, steps](Tape& t, const Tensor& g, const Tensor& cs) {
        Tensor* gf = t.grad_sink(forget);
        Tensor* gz = t.grad_sink(candidate);
        Tensor* gc0 = t.grad_sink(c0);
        const Tensor& fv = forget.value();
        const Tensor& zv = candidate.value();
        const Tensor& cv = c0.value();
        std::vector<double> carry(width, 0.0);
        for (std::size_t step = steps; step-- > 0;) {
            const std::size_t off = step * width;
            const double* prev = step == 0 ? cv.raw() : cs.raw() + off - width;
            for (std::size_t j = 0; j < width; ++j) {
                const double dc = g[off + j] + carry[j];
                const double f = fv[off + j];
                if (gf) (*gf)[off + j] += dc * (prev[j] - zv[off + j]);
                if (gz) (*gz)[off + j] += dc * (1.0 - f);
                carry[j] = dc * f;
            }
        }
        if (gc0) {
            for (std::size_t j = 0; j < width; ++j) (*gc0)[j] += carry[j];
        }
    });
}

namespace {

void check_lstm_shapes(const char* op, const Tensor& gates, const Tensor& c) {
    require_rank2(op, gates);
    require_rank2(op, c);
    if (gates.rows() != c.rows() || gates.cols() != 4 * c.cols()) {
        throw DimensionError(std::string(op) + ": gates " + to_string(gates.shape()) + " incompatible with state " +
                             to_string(c.shape()));
    }
}

}  // namespace

Var lstm_memory(const Var& gates, const Var& c_prev) {
    Tape& tape = same_tape(gates, c_prev);
    const Tensor& gv = gates.value();
    const Tensor& cv = c_prev.value();
    check_lstm_shapes("lstm_memory", gv, cv);
    const std::size_t rows = cv.rows();
    const std::size_t h = cv.cols();
    Tensor out(cv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = gv.raw() + r * 4 * h;
        for (std::size_t j = 0; j < h; ++j) {
            const double i = mslm::sigmoid(gr[j]);
            const double f = mslm::sigmoid(gr[h + j]);
            const double cand = std::tanh(gr[2 * h + j]);
            out[r * h + j] = f * cv[r * h + j] + i * cand;
        }
    }
    const Var in[] = {gates, c_prev};
    return tape.record(std::move(out), in, [gates, c_prev, rows, h](Tape& t, const Tensor& g, const Tensor&) {
        Tensor* gg = t.grad_sink(gates);
        Tensor* gc = t.grad_sink(c_prev);
        const Tensor& gv = gates.value();
        const Tensor& cv = c_prev.value();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = gv.raw() + r * 4 * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double dc = g[r * h + j];
                const double i = mslm::sigmoid(gr[j]);
                const double f = mslm::sigmoid(gr[h + j]);
                const double cand = std::tanh(gr[2 * h + j]);
                if (gg) {
                    double* ggr = gg->raw() + r * 4 * h;
                    ggr[j] += dc * cand * i * (1.0 - i);
                    ggr[h + j] += dc * cv[r * h + j] * f * (1.0 - f);
                    ggr[2 * h + j] += dc * i * (1.0 - cand * cand);
                }
                if (gc) (*gc)[r * h + j] += dc * f;
            }
        }
    });
}

Var lstm_output(const Var& gates, const Var& c_next) {
    Tape& tape = same_tape(gates, c_next);
    const Tensor& gv = gates.value();
    const Tensor& cv = c_next.value();
    check_lstm_shapes("lstm_output", gv, cv);
    const std::size_t rows = cv.rows();
    const std::size_t h = cv.cols();
    Tensor out(cv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = gv.raw() + r * 4 * h;
        for (std::size_t j = 0; j < h; ++j) {
            out[r * h + j] = mslm::sigmoid(gr[3 * h + j]) * std::tanh(cv[r * h + j]);
        }
    }
    const Var in[] = {gates, c_next};
    return tape.record(std::move(out), in, [gates, c_next, rows, h](Tape& t, const Tensor& g, const Tensor&) {
        Tensor* gg = t.grad_sink(gates);
        Tensor* gc = t.grad_sink(c_next);
        const Tensor& gv = gates.value();
        const Tensor& cv = c_next.value();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = gv.raw() + r * 4 * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double dh = g[r * h + j];
                const double o = mslm::sigmoid(gr[3 * h + j]);
                const double tc = std::tanh(cv[r * h + j]);
                if (gg) gg->raw()[r * 4 * h + 3 * h + j] += dh * tc * o * (1.0 - o);
                if (gc) (*gc)[r * h + j] += dh * o * (1.0 - tc * tc);
            }
        }
    });
}

}  // namespace ops

Tensor log_softmax_row(const Tensor& logits) {
    if (logits.empty()) throw DimensionError("softmax_row: empty input");
    Tensor out = logits;
    const double mx = *std::max_element(out.data().begin(), out.data().end());
    double total = 0.0;
    for (double v : out.data()) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    for (auto& v : out.data()) v -= lse;
    return out;
}

Tensor softmax_row(const Tensor& logits) {
    if (logits.empty()) throw DimensionError("softmax_row: empty input");
    Tensor out = logits;
    const double mx = *std::max_element(out.data().begin(), out.data().end());
    double total = 0.0;
    for (auto& v : out.data()) total += (v = std::exp(v - mx));
    for (auto& v : out.data()) v /= total;
    return out;
}

}  // namespace mslm
