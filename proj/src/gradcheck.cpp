#include "vtt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vtt::inline VTT_PRECISION_NS {

namespace {

double evaluate(const MultiLossFn& f, const std::vector<Tensor>& inputs) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    return f(tape, leaves).value().item();
}

}  // namespace

double grad_error(double analytic, double central) {
    return std::fabs(analytic - central) / std::max(std::fabs(analytic) + std::fabs(central), kGradCheckFloor);
}

double finite_diff_check(const MultiLossFn& f, const std::vector<Tensor>& inputs, double h) {
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
        tape.backward(f(tape, leaves));
        for (const auto& v : leaves) analytic.push_back(tape.grad(v));
    }
    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<Scalar> base = inputs[k].to_vector();
        for (std::size_t i = 0; i < base.size(); ++i) {
            std::vector<Scalar> shifted = base;
            shifted[i] = static_cast<Scalar>(base[i] + h);
            probe[k] = Tensor(inputs[k].shape(), shifted);
            const double up = evaluate(f, probe);
            shifted[i] = static_cast<Scalar>(base[i] - h);
            probe[k] = Tensor(inputs[k].shape(), shifted);
            const double down = evaluate(f, probe);
            const double central = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            worst = std::max(worst, grad_error(a, central));
        }
        probe[k] = inputs[k];
    }
    return worst;
}

double finite_diff_check(const LossFn& f, const Tensor& x, double h) {
    return finite_diff_check([&f](ad::Tape& tape, const std::vector<ad::Var>& v) { return f(tape, v[0]); },
                             std::vector<Tensor>{x}, h);
}

}  // namespace vtt::inline VTT_PRECISION_NS
