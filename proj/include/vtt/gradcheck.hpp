#pragma once

#include <functional>
#include <vector>

#include "vtt/autodiff.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Builds a scalar loss on `tape` from one leaf per input tensor.
using MultiLossFn = std::function<ad::Var(ad::Tape& tape, const std::vector<ad::Var>& inputs)>;
using LossFn = std::function<ad::Var(ad::Tape& tape, ad::Var x)>;

// Max over coordinates of |analytic - central| / max(|analytic| + |central|, kGradCheckFloor).
// The central difference (f(x+h e_i) - f(x-h e_i)) / 2h is formed in double.
// The floor keeps structurally zero gradients (e.g. a key bias under softmax)
// from turning difference noise of ~1e-9 into a relative error of 1.
inline constexpr double kGradCheckFloor = 1e-5;
double grad_error(double analytic, double central);

double finite_diff_check(const LossFn& f, const Tensor& x, double h);
double finite_diff_check(const MultiLossFn& f, const std::vector<Tensor>& inputs, double h);

}  // namespace vtt::inline VTT_PRECISION_NS
