#include "vtt/nn.hpp"

#include <cmath>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

ad::Var Graph::operator()(const Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    ad::Var v = tape.leaf(p.value, grad_enabled_ && p.trainable);
    bound_.emplace(&p, v);
    return v;
}

Tensor Graph::grad(const Param& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return Tensor::zeros(p.value.shape());
    return tape.grad(it->second);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool bias) {
    Linear l;
    l.weight.value = rng.normal_tensor({out, in}, static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(in))));
    l.bias.value = Tensor::zeros({out});
    l.has_bias = bias;
    return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool bias) {
    Linear l;
    l.weight.value = Tensor::zeros({out, in});
    l.bias.value = Tensor::zeros({out});
    l.has_bias = bias;
    return l;
}

ad::Var Linear::forward(Graph& g, ad::Var x) const {
    return ad::linear(x, g(weight), has_bias ? g(bias) : ad::Var{});
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    if (has_bias) fn(prefix + ".bias", bias);
}

LoRA LoRA::init(std::size_t in, std::size_t out, std::size_t rank, Scalar alpha, Rng& rng) {
    if (rank == 0) throw ParameterError("LoRA rank must be positive");
    LoRA a;
    a.down.value = rng.normal_tensor({rank, in}, static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(rank))));
    a.up.value = Tensor::zeros({out, rank});
    a.alpha = alpha;
    return a;
}

void LoRA::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".down", down);
    fn(prefix + ".up", up);
}

ad::Var lora_forward(Graph& g, const Linear& layer, const LoRA& adapter, ad::Var x) {
    if (adapter.down.value.dim(1) != layer.in_dim() || adapter.up.value.dim(0) != layer.out_dim() ||
        adapter.up.value.dim(1) != adapter.rank()) {
        throw DimensionError("LoRA adapter " + shape_str(adapter.up.value.shape()) + "*" +
                             shape_str(adapter.down.value.shape()) + " does not fit layer " +
                             shape_str(layer.weight.value.shape()));
    }
    ad::Var base = layer.forward(g, x);
    ad::Var delta = ad::linear(ad::linear(x, g(adapter.down)), g(adapter.up));
    return ad::add(base, ad::scale(delta, adapter.scale()));
}

namespace {

ad::Var project(Graph& g, const Linear& layer, const std::optional<LoRA>& lora, ad::Var x) {
    return lora ? lora_forward(g, layer, *lora, x) : layer.forward(g, x);
}

Param ones(std::size_t d) { return Param{Tensor::full({d}, 1), true}; }
Param zeros(std::size_t d) { return Param{Tensor::zeros({d}), true}; }

}  // namespace

MultiHeadAttention MultiHeadAttention::init(std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0) throw DimensionError("model dim must be divisible by head count");
    MultiHeadAttention m;
    m.q = Linear::init(d, d, rng);
    m.k = Linear::init(d, d, rng);
    m.v = Linear::init(d, d, rng);
    m.o = Linear::init(d, d, rng);
    m.heads = heads;
    return m;
}

AttentionOutput MultiHeadAttention::forward(Graph& g, ad::Var tokens, std::size_t groups) const {
    ad::Var qv = project(g, q, lora_q, tokens);
    ad::Var kv = project(g, k, lora_k, tokens);
    ad::Var vv = project(g, v, lora_v, tokens);
    auto att = ad::multi_head_attention(qv, kv, vv, heads, groups);
    return {project(g, o, lora_o, att.output), att.weights};
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
    q.visit(prefix + ".q", fn);
    k.visit(prefix + ".k", fn);
    v.visit(prefix + ".v", fn);
    o.visit(prefix + ".o", fn);
    if (lora_q) lora_q->visit(prefix + ".lora_q", fn);
    if (lora_k) lora_k->visit(prefix + ".lora_k", fn);
    if (lora_v) lora_v->visit(prefix + ".lora_v", fn);
    if (lora_o) lora_o->visit(prefix + ".lora_o", fn);
}

void attach_lora(MultiHeadAttention& attn, const std::vector<std::string>& targets, std::size_t rank, Scalar alpha,
                 Rng& rng) {
    for (const auto& t : targets) {
        if (t == "q") attn.lora_q = LoRA::init(attn.q.in_dim(), attn.q.out_dim(), rank, alpha, rng);
        else if (t == "k") attn.lora_k = LoRA::init(attn.k.in_dim(), attn.k.out_dim(), rank, alpha, rng);
        else if (t == "v") attn.lora_v = LoRA::init(attn.v.in_dim(), attn.v.out_dim(), rank, alpha, rng);
        else if (t == "o") attn.lora_o = LoRA::init(attn.o.in_dim(), attn.o.out_dim(), rank, alpha, rng);
        else throw ParameterError("unknown LoRA target '" + t + "'");
    }
}

TransformerBlock TransformerBlock::init(std::size_t d, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.ln1_gain = ones(d);
    b.ln1_bias = zeros(d);
    b.ln2_gain = ones(d);
    b.ln2_bias = zeros(d);
    b.attn = MultiHeadAttention::init(d, heads, rng);
    b.fc1 = Linear::init(d, d * mlp_ratio, rng);
    b.fc2 = Linear::init(d * mlp_ratio, d, rng);
    return b;
}

AttentionOutput TransformerBlock::forward(Graph& g, ad::Var tokens, std::size_t groups) const {
    auto att = attn.forward(g, ad::layer_norm(tokens, g(ln1_gain), g(ln1_bias)), groups);
    ad::Var x = ad::add(tokens, att.output);
    ad::Var h = fc2.forward(g, ad::gelu(fc1.forward(g, ad::layer_norm(x, g(ln2_gain), g(ln2_bias)))));
    return {ad::add(x, h), att.weights};
}

void TransformerBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".ln1.gain", ln1_gain);
    fn(prefix + ".ln1.bias", ln1_bias);
    fn(prefix + ".ln2.gain", ln2_gain);
    fn(prefix + ".ln2.bias", ln2_bias);
    attn.visit(prefix + ".attn", fn);
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
}

}  // namespace vtt::inline VTT_PRECISION_NS
