#include "vtt/fusion.hpp"

#include <cmath>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::string to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::VT: return "vt";
        case FusionVariant::VTReverse: return "vt-reverse";
        case FusionVariant::VT2D: return "vt-2d";
        case FusionVariant::V: return "v";
        case FusionVariant::T: return "t";
        case FusionVariant::VTMean: return "vt-mean";
        case FusionVariant::TMean: return "t-mean";
        case FusionVariant::VMean: return "v-mean";
    }
    return "vt";
}

FusionVariant parse_fusion_variant(const std::string& s) {
    for (auto v : {FusionVariant::VT, FusionVariant::VTReverse, FusionVariant::VT2D, FusionVariant::V, FusionVariant::T,
                   FusionVariant::VTMean, FusionVariant::TMean, FusionVariant::VMean}) {
        if (to_string(v) == s) return v;
    }
    throw ParameterError("unknown fusion variant '" + s + "'");
}

namespace {

double softplus(double z) { return std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.0); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double softplus_inverse(double y) { return std::log(std::expm1(y)); }

// Discretized per-(channel, state) coefficients, kept in double.
struct Discretized {
    std::vector<double> a, abar, bbar, c;  // [d*N]
    std::vector<double> delta, dskip;       // [d]
};

Discretized discretize(const Tensor& rho, const Tensor& b, const Tensor& c, const Tensor& dskip, const Tensor& draw) {
    const std::size_t d = dskip.numel(), n = rho.numel() / d;
    Discretized z;
    z.a.resize(d * n);
    z.abar.resize(d * n);
    z.bbar.resize(d * n);
    z.c.resize(d * n);
    z.delta.resize(d);
    z.dskip.resize(d);
    for (std::size_t ch = 0; ch < d; ++ch) {
        z.delta[ch] = softplus(draw[ch]);
        z.dskip[ch] = dskip[ch];
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = ch * n + k;
            const double a = -softplus(rho[i]);
            z.a[i] = a;
            z.abar[i] = std::exp(z.delta[ch] * a);
            // (exp(delta a) - 1) / a, with its a -> 0 limit delta.
            const double ratio = a == 0.0 ? z.delta[ch] : std::expm1(z.delta[ch] * a) / a;
            z.bbar[i] = ratio * b[i];
            z.c[i] = c[i];
        }
    }
    return z;
}

}  // namespace

SSMLayer SSMLayer::init(std::size_t d, std::size_t state, Rng& rng) {
    if (d == 0 || state == 0) throw ParameterError("SSM sizes must be positive");
    SSMLayer s;
    std::vector<Scalar> rho(d * state), b(d * state, 1);
    for (std::size_t ch = 0; ch < d; ++ch)
        for (std::size_t k = 0; k < state; ++k)
            rho[ch * state + k] = static_cast<Scalar>(softplus_inverse(0.5 * static_cast<double>(k + 1)));
    s.rho = Param{Tensor({d, state}, rho), true};
    s.b = Param{Tensor({d, state}, b), true};
    s.c = Param{rng.normal_tensor({d, state}, static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(state)))), true};
    s.d_skip = Param{Tensor::full({d}, 1), true};
    s.delta_raw = Param{Tensor::full({d}, static_cast<Scalar>(softplus_inverse(0.5))), true};
    return s;
}

void SSMLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".rho", rho);
    fn(prefix + ".b", b);
    fn(prefix + ".c", c);
    fn(prefix + ".d_skip", d_skip);
    fn(prefix + ".delta_raw", delta_raw);
}

ad::Var ssm_forward(Graph& g, const SSMLayer& layer, ad::Var seq, std::size_t length) {
    const std::size_t d = layer.channels(), n = layer.state();
    if (seq.value().rank() != 2 || seq.shape()[1] != d) {
        throw DimensionError("ssm input " + shape_str(seq.shape()) + " does not have " + std::to_string(d) +
                             " channels");
    }
    const std::size_t rows = seq.shape()[0];
    if (length == 0 || rows % length != 0) throw DimensionError("ssm input rows not divisible by sequence length");
    const std::size_t B = rows / length;

    ad::Var rho = g(layer.rho), bv = g(layer.b), cv = g(layer.c), dv = g(layer.d_skip), delv = g(layer.delta_raw);
    auto z = std::make_shared<Discretized>(
        discretize(rho.value(), bv.value(), cv.value(), dv.value(), delv.value()));
    const auto& x = seq.value().data();
    // States are kept for the backward pass: hs[((b*L + t)*d + ch)*N + k].
    auto hs = std::make_shared<std::vector<double>>(rows * d * n);
    std::vector<Scalar> y(rows * d);
    for (std::size_t bi = 0; bi < B; ++bi) {
        for (std::size_t ch = 0; ch < d; ++ch) {
            for (std::size_t t = 0; t < length; ++t) {
                const std::size_t r = bi * length + t;
                const double xt = x[r * d + ch];
                double acc = z->dskip[ch] * xt;
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t i = ch * n + k;
                    const double prev = t == 0 ? 0.0 : (*hs)[((r - 1) * d + ch) * n + k];
                    const double h = z->abar[i] * prev + z->bbar[i] * xt;
                    (*hs)[(r * d + ch) * n + k] = h;
                    acc += z->c[i] * h;
                }
                y[r * d + ch] = static_cast<Scalar>(acc);
            }
        }
    }
    return g.tape.record(
        "ssm", Tensor({rows, d}, std::move(y)), {seq, rho, bv, cv, dv, delv},
        [seq, rho, bv, cv, dv, delv, z, hs, B, length, d, n](std::span<const Scalar> gy, ad::Tape& tape) {
            const auto& x = seq.value().data();
            const auto& bval = bv.value().data();
            const std::size_t rows = B * length;
            std::vector<double> gx(rows * d, 0.0);
            std::vector<double> g_abar(d * n, 0.0), g_bbar(d * n, 0.0), gc(d * n, 0.0), gd(d, 0.0);
            std::vector<double> lambda(n);
            for (std::size_t bi = 0; bi < B; ++bi) {
                for (std::size_t ch = 0; ch < d; ++ch) {
                    std::fill(lambda.begin(), lambda.end(), 0.0);
                    for (std::size_t tt = length; tt-- > 0;) {
                        const std::size_t r = bi * length + tt;
                        const double g_t = gy[r * d + ch];
                        const double xt = x[r * d + ch];
                        gd[ch] += g_t * xt;
                        double gxt = z->dskip[ch] * g_t;
                        for (std::size_t k = 0; k < n; ++k) {
                            const std::size_t i = ch * n + k;
                            const double h = (*hs)[(r * d + ch) * n + k];
                            const double prev = tt == 0 ? 0.0 : (*hs)[((r - 1) * d + ch) * n + k];
                            // lambda_t = dL/dh_t = gy_t c + Abar lambda_{t+1}
                            lambda[k] = g_t * z->c[i] + z->abar[i] * lambda[k];
                            gc[i] += g_t * h;
                            g_abar[i] += lambda[k] * prev;
                            g_bbar[i] += lambda[k] * xt;
                            gxt += lambda[k] * z->bbar[i];
                        }
                        gx[r * d + ch] = gxt;
                    }
                }
            }
            std::vector<Scalar> g_rho(d * n), g_b(d * n), g_c(d * n), g_d(d), g_delraw(d);
            const auto& rho_v = rho.value().data();
            const auto& del_v = delv.value().data();
            for (std::size_t ch = 0; ch < d; ++ch) {
                const double delta = z->delta[ch];
                double g_delta = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t i = ch * n + k;
                    const double a = z->a[i], abar = z->abar[i], b = bval[i];
                    double ga = 0.0, gab_total = g_abar[i];
                    if (a == 0.0) {
                        // Bbar = delta b; d/da of (exp(delta a) - 1)/a at 0 is delta^2 / 2.
                        g_b[i] = static_cast<Scalar>(g_bbar[i] * delta);
                        g_delta += g_bbar[i] * b;
                        ga += g_bbar[i] * b * delta * delta / 2;
                    } else {
                        const double ratio = std::expm1(delta * a) / a;
                        g_b[i] = static_cast<Scalar>(g_bbar[i] * ratio);
                        // Bbar = (Abar - 1) / a * b: explicit a-dependence plus the path through Abar.
                        ga += g_bbar[i] * b * (-ratio / a);
                        gab_total += g_bbar[i] * b / a;
                    }
                    ga += gab_total * delta * abar;
                    g_delta += gab_total * a * abar;
                    g_rho[i] = static_cast<Scalar>(-sigmoid(rho_v[i]) * ga);
                    g_c[i] = static_cast<Scalar>(gc[i]);
                }
                g_d[ch] = static_cast<Scalar>(gd[ch]);
                g_delraw[ch] = static_cast<Scalar>(sigmoid(del_v[ch]) * g_delta);
            }
            std::vector<Scalar> gxs(gx.begin(), gx.end());
            tape.accumulate(seq, gxs);
            tape.accumulate(rho, g_rho);
            tape.accumulate(bv, g_b);
            tape.accumulate(cv, g_c);
            tape.accumulate(dv, g_d);
            tape.accumulate(delv, g_delraw);
        });
}

ScanSequence cross_scan(const std::vector<ad::Var>& vision, const std::vector<ad::Var>& text) {
    if (vision.size() != text.size()) {
        throw ContractError("trace lengths differ: " + std::to_string(vision.size()) + " vs " +
                            std::to_string(text.size()));
    }
    if (vision.empty()) throw ContractError("empty traces");
    std::vector<ad::Var> parts;
    for (std::size_t j = vision.size(); j-- > 0;) {
        parts.push_back(vision[j]);
        parts.push_back(text[j]);
    }
    return {ad::interleave_rows(parts), parts.size()};
}

namespace {

ScanSequence ordered(std::vector<ad::Var> parts) {
    const std::size_t n = parts.size();
    return {ad::interleave_rows(parts), n};
}

std::vector<ad::Var> deep_to_shallow(const std::vector<ad::Var>& trace) {
    return std::vector<ad::Var>(trace.rbegin(), trace.rend());
}

}  // namespace

ScanSequence scan_for_variant(const std::vector<ad::Var>& vision, const std::vector<ad::Var>& text,
                              FusionVariant variant) {
    switch (variant) {
        case FusionVariant::VT:
        case FusionVariant::VT2D:
        case FusionVariant::VTMean:
            return cross_scan(vision, text);
        case FusionVariant::VTReverse: {
            if (vision.size() != text.size()) throw ContractError("trace lengths differ");
            std::vector<ad::Var> parts;
            for (std::size_t j = 0; j < vision.size(); ++j) {
                parts.push_back(vision[j]);
                parts.push_back(text[j]);
            }
            return ordered(parts);
        }
        case FusionVariant::V:
        case FusionVariant::VMean:
            return ordered(deep_to_shallow(vision));
        case FusionVariant::T:
        case FusionVariant::TMean:
            return ordered(deep_to_shallow(text));
    }
    throw ParameterError("unhandled fusion variant");
}

FusionParams FusionParams::init(std::size_t d, std::size_t embed_dim, std::size_t layers, std::size_t state, Rng& rng,
                                FusionVariant variant) {
    FusionParams p;
    p.m1 = Linear::init(d, d, rng);
    p.m2_in = Linear::init(d, d, rng);
    p.m2_out = Linear::zeros(d, embed_dim);
    p.pos = Param{rng.normal_tensor({2 * layers, d}, Scalar(0.02)), true};
    p.ssm1 = SSMLayer::init(d, state, rng);
    p.ssm2 = SSMLayer::init(d, state, rng);
    p.out = Linear::zeros(d, embed_dim);
    p.variant = variant;
    return p;
}

void FusionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    m1.visit(prefix + ".m1", fn);
    m2_in.visit(prefix + ".m2_in", fn);
    m2_out.visit(prefix + ".m2_out", fn);
    fn(prefix + ".pos", pos);
    ssm1.visit(prefix + ".ssm1", fn);
    ssm2.visit(prefix + ".ssm2", fn);
    out.visit(prefix + ".out", fn);
}

ad::Var residual_branch(Graph& g, const FusionParams& p, const ScanSequence& h) {
    ad::Var pooled = ad::segment_mean(h.tokens, h.length);
    return p.m2_out.forward(g, ad::gelu(p.m2_in.forward(g, pooled)));
}

ad::Var ssm_branch(Graph& g, const FusionParams& p, const ScanSequence& h) {
    const std::size_t max_len = p.pos.value.dim(0);
    if (h.length == 0 || h.length > max_len) {
        throw ContractError("scan length " + std::to_string(h.length) + " does not fit " + std::to_string(max_len) +
                            " position embeddings");
    }
    const std::size_t B = h.tokens.shape()[0] / h.length;
    ad::Var e = h.length == max_len ? g(p.pos) : ad::slice(g(p.pos), 0, 0, h.length);
    ad::Var x = ad::add(p.m1.forward(g, h.tokens), ad::concat(std::vector<ad::Var>(B, e), 0));
    x = ssm_forward(g, p.ssm1, x, h.length);
    x = ad::silu(x);
    x = ssm_forward(g, p.ssm2, x, h.length);
    return ad::segment_mean(p.out.forward(g, x), h.length);
}

ad::Var fuse(ad::Var mu_res, ad::Var mu_ssm) {
    if (mu_res.shape() != mu_ssm.shape()) {
        throw DimensionError("fuse: " + shape_str(mu_res.shape()) + " vs " + shape_str(mu_ssm.shape()));
    }
    return ad::add(mu_res, mu_ssm);
}

ad::Var fusion_forward(Graph& g, const FusionParams& p, const std::vector<ad::Var>& vision,
                       const std::vector<ad::Var>& text) {
    const ScanSequence h = scan_for_variant(vision, text, p.variant);
    const ad::Var mu_res = residual_branch(g, p, h);
    switch (p.variant) {
        case FusionVariant::VTMean:
        case FusionVariant::TMean:
        case FusionVariant::VMean:
            return mu_res;
        case FusionVariant::VT2D: {
            const ScanSequence rev = scan_for_variant(vision, text, FusionVariant::VTReverse);
            ad::Var both = ad::scale(ad::add(ssm_branch(g, p, h), ssm_branch(g, p, rev)), Scalar(0.5));
            return fuse(mu_res, both);
        }
        default:
            return fuse(mu_res, ssm_branch(g, p, h));
    }
}

}  // namespace vtt::inline VTT_PRECISION_NS
