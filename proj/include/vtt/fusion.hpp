#pragma once

#include <string>
#include <vector>

#include "vtt/nn.hpp"

namespace vtt::inline VTT_PRECISION_NS {

enum class FusionVariant { VT, VTReverse, VT2D, V, T, VTMean, TMean, VMean };

std::string to_string(FusionVariant v);
FusionVariant parse_fusion_variant(const std::string& s);

// Diagonal state space layer, one independent N-state system per channel.
//   a = -softplus(rho), delta = softplus(delta_raw)
//   Abar = exp(delta a), Bbar = (Abar - 1) / a * b   (delta * b when a == 0)
//   h_t = Abar h_{t-1} + Bbar x_t, h_0 = 0;  y_t = sum_n c h_t + d_skip x_t
struct SSMLayer {
    Param rho;        // [d x N]
    Param b;          // [d x N]
    Param c;          // [d x N]
    Param d_skip;     // [d]
    Param delta_raw;  // [d]

    static SSMLayer init(std::size_t d, std::size_t state, Rng& rng);
    std::size_t channels() const { return d_skip.value.numel(); }
    std::size_t state() const { return rho.value.dim(1); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// seq: [B*L x d] holding B independent sequences of length L.
ad::Var ssm_forward(Graph& g, const SSMLayer& layer, ad::Var seq, std::size_t length);

struct ScanSequence {
    ad::Var tokens;          // [B*L x d]
    std::size_t length = 0;  // L
};

// Interleaves the traces deep to shallow: (f^l, t^l, ..., f^1, t^1).
// Each trace entry is [B x d]; the text entries may be constants.
ScanSequence cross_scan(const std::vector<ad::Var>& vision, const std::vector<ad::Var>& text);
// Ordering used by each variant (vt-2d returns the forward order).
ScanSequence scan_for_variant(const std::vector<ad::Var>& vision, const std::vector<ad::Var>& text,
                              FusionVariant variant);

struct FusionParams {
    Linear m1;            // pre-SSM map, d -> d
    Linear m2_in, m2_out; // residual MLP, d -> d -> D, m2_out zero at init
    Param pos;            // E: [2l x d]
    SSMLayer ssm1, ssm2;
    Linear out;           // d -> D, zero at init
    FusionVariant variant = FusionVariant::VT;

    static FusionParams init(std::size_t d, std::size_t embed_dim, std::size_t layers, std::size_t state, Rng& rng,
                             FusionVariant variant = FusionVariant::VT);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// mu_res = M2(mean over positions of H): [B x D]
ad::Var residual_branch(Graph& g, const FusionParams& p, const ScanSequence& h);
// mean over positions of out(SSM2(SiLU(SSM1(M1(H) + E)))): [B x D]
ad::Var ssm_branch(Graph& g, const FusionParams& p, const ScanSequence& h);
ad::Var fuse(ad::Var mu_res, ad::Var mu_ssm);

// Full fusion for the configured variant: mu [B x D].
ad::Var fusion_forward(Graph& g, const FusionParams& p, const std::vector<ad::Var>& vision,
                       const std::vector<ad::Var>& text);

}  // namespace vtt::inline VTT_PRECISION_NS
