#include "vtt/objective.hpp"

#include <cmath>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

namespace {

void require_unit_rows(const Tensor& x, const char* what) {
    if (x.rank() != 2) throw DimensionError(std::string(what) + " must be a matrix, got " + shape_str(x.shape()));
    const std::size_t d = x.dim(1);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
        const double n = norm2(x.data().subspan(r * d, d));
        if (std::fabs(n - 1.0) > 1e-4) {
            throw ContractError(std::string(what) + " row " + std::to_string(r) + " has norm " + std::to_string(n));
        }
    }
}

}  // namespace

ad::Var similarity(ad::Var f, ad::Var t) {
    require_unit_rows(f.value(), "image features");
    require_unit_rows(t.value(), "text features");
    if (f.shape()[1] != t.shape()[1]) {
        throw DimensionError("feature dims differ: " + shape_str(f.shape()) + " vs " + shape_str(t.shape()));
    }
    return ad::matmul(f, ad::transpose(t));
}

Tensor similarity(const Tensor& f, const Tensor& t) {
    ad::Tape tape;
    return similarity(tape.constant(f), tape.constant(t)).value();
}

ad::Var class_probabilities(ad::Var s, Scalar tau) { return ad::softmax(s, tau); }

Tensor class_probabilities(const Tensor& s, Scalar tau) {
    ad::Tape tape;
    return ad::softmax(tape.constant(s), tau).value();
}

ad::Var cross_entropy_loss(ad::Var s, const std::vector<std::size_t>& labels, Scalar tau) {
    return ad::nll_loss(ad::log_softmax(s, tau), labels);
}

std::vector<std::size_t> predict(const Tensor& s) {
    const std::size_t rows = s.rows(), k = s.cols();
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (s.data()[r * k + j] > s.data()[r * k + best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
    if (predicted.size() != labels.size() || labels.empty()) throw DimensionError("accuracy: size mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace vtt::inline VTT_PRECISION_NS
