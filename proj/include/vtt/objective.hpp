#pragma once

#include <vector>

#include "vtt/autodiff.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// s[i][j] = f_i . t_j for unit rows; a row off the unit sphere by more than
// 1e-4 is a contract error.
ad::Var similarity(ad::Var f, ad::Var t);
Tensor similarity(const Tensor& f, const Tensor& t);

ad::Var class_probabilities(ad::Var s, Scalar tau);
Tensor class_probabilities(const Tensor& s, Scalar tau);

// -(1/N) sum_i log p[i][label_i], p = softmax(s / tau) per row.
ad::Var cross_entropy_loss(ad::Var s, const std::vector<std::size_t>& labels, Scalar tau);

// Row argmax; ties go to the lowest class index.
std::vector<std::size_t> predict(const Tensor& s);

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);

}  // namespace vtt::inline VTT_PRECISION_NS
