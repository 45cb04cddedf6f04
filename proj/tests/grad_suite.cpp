// Compiled with VTT_DOUBLE_PRECISION against vtt_core_f64.
#include "grad_suite.hpp"

#include <cmath>

#include "vtt/encoders.hpp"
#include "vtt/fusion.hpp"
#include "vtt/gradcheck.hpp"
#include "vtt/model.hpp"
#include "vtt/objective.hpp"
#include "vtt/tia.hpp"

namespace vtt_grad {

using namespace vtt;

namespace {

constexpr double kStep = 1e-6;

ad::Var probe(ad::Var y, Rng& rng) {
    ad::Var w = y.tape().constant(rng.normal_tensor(y.shape(), 1));
    return ad::sum(ad::mul(y, w));
}

// One op: random inputs of the given shapes, scalar via a random probe.
using OpFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

GradCase op_case(std::string name, std::vector<Shape> shapes, OpFn op, double input_std = 1.0) {
    return {std::move(name), [shapes, op, input_std](std::uint64_t seed) {
                Rng rng(seed);
                std::vector<Tensor> inputs;
                for (const auto& s : shapes) inputs.push_back(rng.normal_tensor(s, input_std));
                const std::uint64_t probe_seed = rng.next_u64();
                return finite_diff_check(
                    [&](ad::Tape&, const std::vector<ad::Var>& v) {
                        Rng pr(probe_seed);
                        return probe(op(v), pr);
                    },
                    inputs, kStep);
            }};
}

// Central differences over model parameters, with the same error measure as
// finite_diff_check.
using GraphLoss = std::function<ad::Var(Graph&)>;

double param_check(const std::vector<Param*>& params, const GraphLoss& loss) {
    std::vector<Tensor> analytic;
    {
        Graph g;
        g.tape.backward(loss(g));
        for (auto* p : params) analytic.push_back(g.grad(*p));
    }
    auto eval = [&] {
        Graph g(false);
        return static_cast<double>(loss(g).value().item());
    };
    double worst = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor original = params[k]->value;
        std::vector<double> base = original.to_vector();
        for (std::size_t i = 0; i < base.size(); ++i) {
            auto shifted = base;
            shifted[i] = base[i] + kStep;
            params[k]->value = Tensor(original.shape(), shifted);
            const double up = eval();
            shifted[i] = base[i] - kStep;
            params[k]->value = Tensor(original.shape(), shifted);
            const double down = eval();
            const double central = (up - down) / (2 * kStep);
            const double a = analytic[k][i];
            worst = std::max(worst, grad_error(a, central));
        }
        params[k]->value = original;
    }
    return worst;
}

template <class M>
std::vector<Param*> collect(M& module) {
    std::vector<Param*> out;
    module.visit("m", [&](const std::string&, Param& p) {
        p.trainable = true;
        out.push_back(&p);
    });
    return out;
}

template <class M>
void randomize(M& module, Rng& rng, Scalar stddev) {
    module.visit("m", [&](const std::string&, Param& p) { p.value = rng.normal_tensor(p.value.shape(), stddev); });
}

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.mlp_ratio = 2;
    cfg.embed_dim = 8;
    cfg.image_size = 8;
    cfg.patch = 4;
    cfg.channels = 3;
    return cfg;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
    std::vector<GradCase> cases;
    using V = std::vector<ad::Var>;

    cases.push_back(op_case("add", {{3, 4}, {3, 4}}, [](const V& v) { return ad::add(v[0], v[1]); }));
    cases.push_back(op_case("sub", {{3, 4}, {3, 4}}, [](const V& v) { return ad::sub(v[0], v[1]); }));
    cases.push_back(op_case("mul", {{3, 4}, {3, 4}}, [](const V& v) { return ad::mul(v[0], v[1]); }));
    cases.push_back(op_case("scale", {{5}}, [](const V& v) { return ad::scale(v[0], -1.7); }));
    cases.push_back(op_case("add_scalar", {{5}}, [](const V& v) { return ad::mul(ad::add_scalar(v[0], 0.3), v[0]); }));
    cases.push_back(op_case("neg", {{2, 3}}, [](const V& v) { return ad::neg(v[0]); }));
    cases.push_back(op_case("relu", {{4, 5}}, [](const V& v) { return ad::relu(v[0]); }));
    cases.push_back(op_case("gelu", {{4, 5}}, [](const V& v) { return ad::gelu(v[0]); }));
    cases.push_back(op_case("silu", {{4, 5}}, [](const V& v) { return ad::silu(v[0]); }));
    cases.push_back(op_case("matmul", {{3, 4}, {4, 2}}, [](const V& v) { return ad::matmul(v[0], v[1]); }));
    cases.push_back(op_case("transpose", {{3, 4}}, [](const V& v) { return ad::transpose(v[0]); }));
    cases.push_back(op_case("linear", {{3, 4}, {5, 4}, {5}}, [](const V& v) { return ad::linear(v[0], v[1], v[2]); }));
    cases.push_back(op_case("linear_vector", {{4}, {5, 4}}, [](const V& v) { return ad::linear(v[0], v[1]); }));
    cases.push_back(op_case("softmax", {{3, 6}}, [](const V& v) { return ad::softmax(v[0], 0.7); }));
    cases.push_back(op_case("log_softmax", {{3, 6}}, [](const V& v) { return ad::log_softmax(v[0], 0.4); }));
    cases.push_back(
        op_case("layer_norm", {{3, 6}, {6}, {6}}, [](const V& v) { return ad::layer_norm(v[0], v[1], v[2]); }));
    cases.push_back(op_case("l2_normalize", {{3, 5}}, [](const V& v) { return ad::l2_normalize(v[0]); }));
    cases.push_back(op_case("mean_axis0", {{4, 3}}, [](const V& v) { return ad::mean(v[0], 0); }));
    cases.push_back(op_case("mean_axis1", {{4, 3}}, [](const V& v) { return ad::mean(v[0], 1); }));
    cases.push_back(op_case("sum", {{4, 3}}, [](const V& v) { return ad::mul(ad::sum(v[0]), ad::sum(v[0])); }));
    cases.push_back(op_case("concat_rows", {{2, 3}, {4, 3}}, [](const V& v) { return ad::concat(v, 0); }));
    cases.push_back(op_case("concat_cols", {{2, 3}, {2, 1}}, [](const V& v) { return ad::concat(v, 1); }));
    cases.push_back(op_case("concat_vectors", {{3}, {2}}, [](const V& v) { return ad::concat(v, 0); }));
    cases.push_back(op_case("slice_rows", {{5, 3}}, [](const V& v) { return ad::slice(v[0], 0, 1, 3); }));
    cases.push_back(op_case("slice_cols", {{5, 3}}, [](const V& v) { return ad::slice(v[0], 1, 1, 2); }));
    cases.push_back(op_case("stack", {{3}, {3}}, [](const V& v) { return ad::stack(v); }));
    cases.push_back(op_case("row", {{4, 3}}, [](const V& v) { return ad::row(v[0], 2); }));
    cases.push_back(op_case("reshape", {{4, 3}}, [](const V& v) { return ad::reshape(v[0], {2, 6}); }));
    cases.push_back(op_case("interleave_rows", {{2, 3}, {2, 3}, {2, 3}}, [](const V& v) { return ad::interleave_rows(v); }));
    cases.push_back(op_case("segment_mean", {{6, 3}}, [](const V& v) { return ad::segment_mean(v[0], 3); }));
    cases.push_back(op_case("embedding", {{5, 3}}, [](const V& v) { return ad::embedding(v[0], {4, 0, 4, 2}); }));
    cases.push_back(op_case("nll_loss", {{3, 4}}, [](const V& v) { return ad::nll_loss(ad::log_softmax(v[0]), {1, 3, 0}); }));
    cases.push_back(op_case("attention", {{5, 8}, {5, 8}, {5, 8}},
                            [](const V& v) { return ad::multi_head_attention(v[0], v[1], v[2], 2).output; }));
    cases.push_back(op_case("attention_grouped", {{6, 4}, {6, 4}, {6, 4}},
                            [](const V& v) { return ad::multi_head_attention(v[0], v[1], v[2], 2, 2).output; }));
    cases.push_back(op_case("similarity", {{3, 5}, {4, 5}}, [](const V& v) {
        return similarity(ad::l2_normalize(v[0]), ad::l2_normalize(v[1]));
    }));
    cases.push_back(op_case("class_probabilities", {{3, 5}, {4, 5}}, [](const V& v) {
        return class_probabilities(similarity(ad::l2_normalize(v[0]), ad::l2_normalize(v[1])), 0.3);
    }));
    cases.push_back(op_case("cross_entropy", {{3, 5}, {4, 5}}, [](const V& v) {
        auto s = similarity(ad::l2_normalize(v[0]), ad::l2_normalize(v[1]));
        return ad::mul(cross_entropy_loss(s, {0, 3, 1}, 0.2), ad::sum(v[0]));
    }));
    cases.push_back(op_case("vtt_loss", {{3, 5}, {3, 5}}, [](const V& v) {
        return ad::mul(vtt_loss(v[0], v[1]), ad::sum(v[1]));
    }));

    cases.push_back({"lora_forward", [](std::uint64_t seed) {
                         Rng rng(seed);
                         Linear layer = Linear::init(6, 5, rng);
                         LoRA lora = LoRA::init(6, 5, 3, 2, rng);
                         lora.up.value = rng.normal_tensor({5, 3}, 1);
                         Tensor x = rng.normal_tensor({4, 6}, 1);
                         const std::uint64_t ps = rng.next_u64();
                         std::vector<Param*> params{&layer.weight, &layer.bias, &lora.down, &lora.up};
                         return param_check(params, [&](Graph& g) {
                             Rng pr(ps);
                             return probe(lora_forward(g, layer, lora, g.constant(x)), pr);
                         });
                     }});

    cases.push_back({"transformer_block", [](std::uint64_t seed) {
                         Rng rng(seed);
                         TransformerBlock block = TransformerBlock::init(8, 2, 2, rng);
                         randomize(block, rng, 0.4);
                         Param x{rng.normal_tensor({2 * 3, 8}, 1), true};
                         const std::uint64_t ps = rng.next_u64();
                         auto params = collect(block);
                         params.push_back(&x);
                         return param_check(params, [&](Graph& g) {
                             Rng pr(ps);
                             return probe(block.forward(g, g(x), 2).output, pr);
                         });
                     }});

    cases.push_back({"ssm_forward", [](std::uint64_t seed) {
                         Rng rng(seed);
                         SSMLayer layer = SSMLayer::init(3, 2, rng);
                         randomize(layer, rng, 0.8);
                         const std::size_t length = 2 + rng.below(6);
                         Param x{rng.normal_tensor({2 * length, 3}, 1), true};
                         const std::uint64_t ps = rng.next_u64();
                         auto params = collect(layer);
                         params.push_back(&x);
                         return param_check(params, [&](Graph& g) {
                             Rng pr(ps);
                             return probe(ssm_forward(g, layer, g(x), length), pr);
                         });
                     }});

    cases.push_back({"make_absorber", [](std::uint64_t seed) {
                         Rng rng(seed);
                         AbsorberAdapter a = AbsorberAdapter::init(6, 5, rng);
                         Param mu{rng.normal_tensor({3, 6}, 1), true};
                         const std::uint64_t ps = rng.next_u64();
                         auto params = collect(a);
                         params.push_back(&mu);
                         return param_check(params, [&](Graph& g) {
                             Rng pr(ps);
                             return probe(make_absorber(g, a, g(mu)), pr);
                         });
                     }});

    // Fusion on random traces, every parameter randomized so no branch is dead.
    for (auto variant : {FusionVariant::VT, FusionVariant::VTReverse, FusionVariant::VT2D, FusionVariant::V,
                         FusionVariant::T, FusionVariant::VTMean}) {
        cases.push_back({"fusion_" + to_string(variant), [variant](std::uint64_t seed) {
                             Rng rng(seed);
                             const std::size_t l = 2, B = 2, d = 4, D = 3;
                             FusionParams p = FusionParams::init(d, D, l, 2, rng, variant);
                             randomize(p, rng, 0.5);
                             std::vector<Param> fv, tv;
                             for (std::size_t j = 0; j < l; ++j) {
                                 fv.push_back(Param{rng.normal_tensor({B, d}, 1), true});
                                 tv.push_back(Param{rng.normal_tensor({B, d}, 1), true});
                             }
                             const std::uint64_t ps = rng.next_u64();
                             auto params = collect(p);
                             for (auto& q : fv) params.push_back(&q);
                             for (auto& q : tv) params.push_back(&q);
                             return param_check(params, [&](Graph& g) {
                                 Rng pr(ps);
                                 std::vector<ad::Var> v, t;
                                 for (auto& q : fv) v.push_back(g(q));
                                 for (auto& q : tv) t.push_back(g(q));
                                 return probe(fusion_forward(g, p, v, t), pr);
                             });
                         }});
    }

    // CE path: vision encoder with LoRA -> similarity -> cross entropy, w.r.t.
    // the adapters and the patch embedding.
    cases.push_back({"chain_ce",
                     [](std::uint64_t seed) {
                         Rng rng(seed);
                         const auto cfg = tiny_config();
                         VisionEncoder enc = VisionEncoder::init(cfg, rng);
                         for (auto& b : enc.blocks) {
                             attach_lora(b.attn, {"q", "v"}, 2, 4, rng);
                             b.attn.lora_q->up.value = rng.normal_tensor(b.attn.lora_q->up.value.shape(), 0.3);
                             b.attn.lora_v->up.value = rng.normal_tensor(b.attn.lora_v->up.value.shape(), 0.3);
                         }
                         Tensor images = rng.normal_tensor({3, 8, 8, 3}, 1);
                         Tensor text = rng.normal_tensor({4, cfg.embed_dim}, 1);
                         std::vector<Param*> params;
                         enc.visit("v", [&](const std::string& name, Param& p) {
                             if (name.find("lora_") != std::string::npos || name.find("patch_embed") != std::string::npos)
                                 params.push_back(&p);
                         });
                         return param_check(params, [&](Graph& g) {
                             auto pass = enc.forward(g, images);
                             auto t = ad::l2_normalize(g.constant(text));
                             return cross_entropy_loss(similarity(pass.features, t), {2, 0, 3}, 0.5);
                         });
                     },
                     true});

    // VtT path: vision traces -> fusion -> absorber -> injected prompt -> text
    // encoder -> L_VtT, w.r.t. fusion, adapter and vision LoRA parameters.
    for (auto tia : {TiaVariant::Replace, TiaVariant::Append}) {
        cases.push_back({"chain_vtt_" + to_string(tia),
                         [tia](std::uint64_t seed) {
                             Rng rng(seed);
                             const auto cfg = tiny_config();
                             const std::size_t K = 3;
                             VisionEncoder venc = VisionEncoder::init(cfg, rng);
                             for (auto& b : venc.blocks) {
                                 attach_lora(b.attn, {"q", "v"}, 2, 4, rng);
                                 b.attn.lora_q->up.value = rng.normal_tensor(b.attn.lora_q->up.value.shape(), 0.3);
                                 b.attn.lora_v->up.value = rng.normal_tensor(b.attn.lora_v->up.value.shape(), 0.3);
                             }
                             TextEncoder tenc = TextEncoder::init(cfg, K, rng);
                             FusionParams fusion = FusionParams::init(cfg.d, cfg.embed_dim, cfg.layers, 2, rng);
                             randomize(fusion, rng, 0.4);
                             AbsorberAdapter absorber = AbsorberAdapter::init(cfg.embed_dim, cfg.d, rng);
                             Tensor images = rng.normal_tensor({2, 8, 8, 3}, 1);
                             const std::vector<std::size_t> cls{2, 0};
                             std::vector<Tensor> text_traces = class_text_traces(tenc);
                             std::vector<Param*> params = collect(fusion);
                             for (auto* p : collect(absorber)) params.push_back(p);
                             venc.visit("v", [&](const std::string& name, Param& p) {
                                 if (name.find("lora_") != std::string::npos) params.push_back(&p);
                             });
                             return param_check(params, [&](Graph& g) {
                                 auto pass = venc.forward(g, images);
                                 std::vector<ad::Var> t;
                                 for (const auto& tr : text_traces) t.push_back(g.constant(gather_rows(tr, cls)));
                                 auto mu = fusion_forward(g, fusion, pass.trace, t);
                                 std::vector<PromptTokens> prompts{tokenize_prompt(tenc.vocab, cls[0]),
                                                                   tokenize_prompt(tenc.vocab, cls[1])};
                                 auto injected = inject_absorber(g, tenc, prompts, make_absorber(g, absorber, mu), tia);
                                 return vtt_loss(absorb(g, tenc, injected, 2), pass.features);
                             });
                         },
                         true});
    }
    return cases;
}

}  // namespace vtt_grad
