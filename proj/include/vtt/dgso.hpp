#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/nn.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Cosine between flattened gradients; 0 when either is the zero tensor.
double grad_cosine(const Tensor& g_ce, const Tensor& g_comb);

// G_comb when cos >= 0, otherwise G_comb - (|G_comb| / |G_ce|) cos G_ce, which
// removes the component of G_comb along G_ce.
Tensor correct_gradient(const Tensor& g_ce, const Tensor& g_comb);

// Mean of per-tensor conflicts; an empty set is a contract error.
double mean_conflict(const std::vector<double>& c_theta);

enum class LossMode { Combined, CeOnly };
enum class Gate { Active, StoppedForever };

std::string to_string(LossMode m);

// Queue of per-epoch conflicts C^1..C^e with a one-way gate on the auxiliary loss.
class ConflictMonitor {
   public:
    explicit ConflictMonitor(std::size_t lambda = 50);

    void push(double c);
    // e is 1-based. Mean of C^1..C^e when e <= lambda, else C^{e-lambda}..C^e
    // (lambda + 1 terms).
    double window_mean(std::size_t e) const;
    // Trips the gate the first time M_e < 0; afterwards always CeOnly.
    LossMode select_loss(double m_e);

    Gate gate() const { return gate_; }
    std::size_t lambda() const { return lambda_; }
    const std::vector<double>& queue() const { return queue_; }

    nlohmann::ordered_json to_json() const;
    static ConflictMonitor from_json(const nlohmann::ordered_json& j);

   private:
    std::size_t lambda_;
    std::vector<double> queue_;
    Gate gate_ = Gate::Active;
};

// Adam with bias correction.
class Adam {
   public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Updates params[i] with grads[i]; moment buffers are created on first use
    // and keyed by position, so the parameter list must be stable.
    void step(const std::vector<Param*>& params, const std::vector<Tensor>& grads);

    double lr() const { return lr_; }
    std::size_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

   private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace vtt::inline VTT_PRECISION_NS
