#include "vtt/dgso.hpp"

#include <cmath>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

double grad_cosine(const Tensor& g_ce, const Tensor& g_comb) {
    if (g_ce.numel() != g_comb.numel()) throw DimensionError("gradient sizes differ");
    const double n1 = norm2(g_ce.data()), n2 = norm2(g_comb.data());
    if (n1 == 0.0 || n2 == 0.0) return 0.0;
    return dot(g_ce.data(), g_comb.data()) / (n1 * n2);
}

Tensor correct_gradient(const Tensor& g_ce, const Tensor& g_comb) {
    if (!g_ce.same_shape(g_comb)) {
        throw DimensionError("correct_gradient: " + shape_str(g_ce.shape()) + " vs " + shape_str(g_comb.shape()));
    }
    const double c = grad_cosine(g_ce, g_comb);
    if (c >= 0.0) return g_comb;
    // |G_comb| / |G_ce| * cos * G_ce == (G_ce . G_comb) / |G_ce|^2 * G_ce
    const double coef = dot(g_ce.data(), g_comb.data()) / dot(g_ce.data(), g_ce.data());
    std::vector<Scalar> out(g_comb.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<Scalar>(static_cast<double>(g_comb[i]) - coef * g_ce[i]);
    }
    return Tensor(g_comb.shape(), std::move(out));
}

double mean_conflict(const std::vector<double>& c_theta) {
    if (c_theta.empty()) throw ContractError("mean_conflict over no tensors");
    double s = 0.0;
    for (double c : c_theta) s += c;
    return s / static_cast<double>(c_theta.size());
}

std::string to_string(LossMode m) { return m == LossMode::Combined ? "combined" : "ce_only"; }

ConflictMonitor::ConflictMonitor(std::size_t lambda) : lambda_(lambda) {
    if (lambda == 0) throw ParameterError("lambda must be positive");
}

void ConflictMonitor::push(double c) { queue_.push_back(c); }

double ConflictMonitor::window_mean(std::size_t e) const {
    if (e == 0 || e > queue_.size()) {
        throw ContractError("window_mean(" + std::to_string(e) + ") with " + std::to_string(queue_.size()) +
                            " recorded epochs");
    }
    const std::size_t first = e <= lambda_ ? 1 : e - lambda_;
    double s = 0.0;
    for (std::size_t k = first; k <= e; ++k) s += queue_[k - 1];
    return s / static_cast<double>(e - first + 1);
}

LossMode ConflictMonitor::select_loss(double m_e) {
    if (gate_ == Gate::StoppedForever) return LossMode::CeOnly;
    if (m_e >= 0.0) return LossMode::Combined;
    gate_ = Gate::StoppedForever;
    return LossMode::CeOnly;
}

nlohmann::ordered_json ConflictMonitor::to_json() const {
    nlohmann::ordered_json j;
    j["lambda"] = lambda_;
    j["queue"] = queue_;
    j["gate"] = gate_ == Gate::Active ? "active" : "stopped";
    return j;
}

ConflictMonitor ConflictMonitor::from_json(const nlohmann::ordered_json& j) {
    ConflictMonitor m(j.at("lambda").get<std::size_t>());
    m.queue_ = j.at("queue").get<std::vector<double>>();
    m.gate_ = j.at("gate").get<std::string>() == "active" ? Gate::Active : Gate::StoppedForever;
    return m;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw ParameterError("learning rate must be > 0");
}

void Adam::step(const std::vector<Param*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw DimensionError("Adam: parameter and gradient counts differ");
    if (m_.empty()) {
        for (auto* p : params) {
            m_.push_back(Tensor::zeros(p->value.shape()));
            v_.push_back(Tensor::zeros(p->value.shape()));
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::size_t n = params[k]->value.numel();
        if (grads[k].numel() != n) throw DimensionError("Adam: gradient shape mismatch");
        std::vector<Scalar> w = params[k]->value.to_vector(), m = m_[k].to_vector(), v = v_[k].to_vector();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grads[k][i];
            m[i] = static_cast<Scalar>(beta1_ * m[i] + (1.0 - beta1_) * g);
            v[i] = static_cast<Scalar>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            w[i] = static_cast<Scalar>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
        const Shape shape = params[k]->value.shape();
        params[k]->value = Tensor(shape, std::move(w));
        m_[k] = Tensor(shape, std::move(m));
        v_[k] = Tensor(shape, std::move(v));
    }
}

void Adam::restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw IntegrityError("Adam state: moment counts differ");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace vtt::inline VTT_PRECISION_NS
