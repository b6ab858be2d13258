#pragma once

#include <functional>
#include <span>

#include "deepred/tensor.hpp"

namespace deepred {

// Central-difference check of analytic gradients.
//
// `loss_fn` must rebuild its computation from the current parameter values,
// run backward, and return the scalar loss; gradients are accumulated into
// the parameters (the checker zeroes them before every call). Returns the
// maximum relative error over every coordinate of every parameter, where
// the relative error uses the denominator max(1e-8, |analytic| + |numeric|).
double gradient_check(const std::function<double()>& loss_fn,
                      std::span<Parameter* const> params, double eps = 1e-5);

}  // namespace deepred
