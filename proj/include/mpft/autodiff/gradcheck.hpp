#pragma once

#include <functional>
#include <span>

#include "mpft/autodiff/tensor.hpp"

namespace mpft::ad {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of x. `f` must be pure.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|): relative error for gradients of
/// magnitude above one, absolute error below it.
double max_relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace mpft::ad
