#include "mslm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mslm/error.hpp"

namespace mslm {

namespace {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

void require_step(double step) {
    if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
}

}  // namespace

double evaluate_scalar(const TapeFn& f, const Tensor& x) {
    Tape tape;
    const Var out = f(tape, tape.constant(x));
    if (out.value().size() != 1) throw ContractError("finite_diff_check: function must return a scalar");
    return out.value()[0];
}

double finite_diff_check(const TapeFn& f, const Tensor& x, double step) {
    require_step(step);
    Tape tape;
    const Var xv = tape.input(x);
    const Var out = f(tape, xv);
    tape.backward(out);
    const Tensor analytic = tape.grad(xv);
    return finite_diff_check([&f](const Tensor& at) { return evaluate_scalar(f, at); }, x, analytic, step);
}

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic, double step) {
    require_step(step);
    if (analytic.shape() != x.shape()) {
        throw DimensionError("finite_diff_check: gradient shape " + to_string(analytic.shape()) +
                             " differs from input " + to_string(x.shape()));
    }
    const double first = f(x);
    const double second = f(x);
    if (!(first == second)) {
        throw OracleError("finite_diff_check: function is not deterministic under a fixed seed");
    }
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double original = probe[i];
        probe[i] = original + step;
        const double up = f(probe);
        probe[i] = original - step;
        const double down = f(probe);
        probe[i] = original;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

double parameter_fd_check(Parameter& p, const std::function<double()>& loss, double step) {
    require_step(step);
    if (loss() != loss()) throw OracleError("parameter_fd_check: loss is not deterministic");
    double worst = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double original = p.value[i];
        p.value[i] = original + step;
        const double up = loss();
        p.value[i] = original - step;
        const double down = loss();
        p.value[i] = original;
        worst = std::max(worst, relative_error(p.grad[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

}  // namespace mslm
