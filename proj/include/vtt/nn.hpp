#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtt/autodiff.hpp"
#include "vtt/random.hpp"

namespace vtt::inline VTT_PRECISION_NS {

struct Param {
    Tensor value;
    bool trainable = true;
};

using ParamVisitor = std::function<void(const std::string& name, Param& p)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Param& p)>;

// A tape plus the leaves bound to model parameters during one forward pass.
// A parameter is bound at most once per graph, so its gradient collects every use.
class Graph {
   public:
    // With grad disabled every parameter is bound as a constant, so no
    // backward closures are recorded.
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    ad::Tape tape;

    ad::Var operator()(const Param& p);
    ad::Var constant(Tensor t) { return tape.constant(std::move(t)); }
    bool is_bound(const Param& p) const { return bound_.count(&p) != 0; }
    // Zeros when the parameter was not used in this graph.
    Tensor grad(const Param& p) const;

   private:
    bool grad_enabled_;
    std::unordered_map<const Param*, ad::Var> bound_;
};

struct Linear {
    Param weight;  // [out x in]
    Param bias;    // [out], unused when has_bias is false
    bool has_bias = true;

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
    static Linear zeros(std::size_t in, std::size_t out, bool bias = true);

    std::size_t in_dim() const { return weight.value.dim(1); }
    std::size_t out_dim() const { return weight.value.dim(0); }
    ad::Var forward(Graph& g, ad::Var x) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// delta W = (alpha / rank) * up * down
struct LoRA {
    Param down;  // [r x in]
    Param up;    // [out x r], zero at init
    Scalar alpha = 8;

    static LoRA init(std::size_t in, std::size_t out, std::size_t rank, Scalar alpha, Rng& rng);
    std::size_t rank() const { return down.value.dim(0); }
    Scalar scale() const { return alpha / static_cast<Scalar>(rank()); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

ad::Var lora_forward(Graph& g, const Linear& layer, const LoRA& adapter, ad::Var x);

struct AttentionOutput {
    ad::Var output;  // [rows x d]
    Tensor weights;  // [groups*h x T x T]
};

struct MultiHeadAttention {
    Linear q, k, v, o;
    std::optional<LoRA> lora_q, lora_k, lora_v, lora_o;
    std::size_t heads = 1;

    static MultiHeadAttention init(std::size_t d, std::size_t heads, Rng& rng);
    // tokens: [groups*T x d]
    AttentionOutput forward(Graph& g, ad::Var tokens, std::size_t groups = 1) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct TransformerBlock {
    Param ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    MultiHeadAttention attn;
    Linear fc1, fc2;

    static TransformerBlock init(std::size_t d, std::size_t heads, std::size_t mlp_ratio, Rng& rng);
    // Pre-norm: x + attn(ln1(x)), then + mlp(ln2(.)) with a GELU MLP.
    AttentionOutput forward(Graph& g, ad::Var tokens, std::size_t groups = 1) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Attaches fresh adapters to the named projections ("q", "k", "v", "o").
void attach_lora(MultiHeadAttention& attn, const std::vector<std::string>& targets, std::size_t rank, Scalar alpha,
                 Rng& rng);

}  // namespace vtt::inline VTT_PRECISION_NS
