#pragma once

#include <functional>

#include "mslm/autograd.hpp"

namespace mslm {

/// Differentiable scalar function of one tensor, expressed on a tape.
using TapeFn = std::function<Var(Tape&, const Var& x)>;

/// Max over entries of |analytic - central difference| / (|analytic| + |numeric| + 1e-12).
/// The analytic gradient comes from a backward pass over `f`.
/// Throws OracleError if `f` is not deterministic.
double finite_diff_check(const TapeFn& f, const Tensor& x, double step);

/// Same comparison against a caller-supplied analytic gradient.
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic, double step);

/// Checks `p.grad` (already populated by the caller) against central differences
/// of `loss`, which must re-evaluate the full forward pass reading `p.value`.
double parameter_fd_check(Parameter& p, const std::function<double()>& loss, double step);

/// Value-only evaluation of a TapeFn.
double evaluate_scalar(const TapeFn& f, const Tensor& x);

}  // namespace mslm
