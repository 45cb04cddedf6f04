#pragma once

#include <string>
#include <vector>

#include "vtt/encoders.hpp"

namespace vtt::inline VTT_PRECISION_NS {

enum class TiaVariant { Replace, Append };

std::string to_string(TiaVariant v);
TiaVariant parse_tia_variant(const std::string& s);

inline constexpr Scalar kAbsorberBiasInit = Scalar(0.5);

// M3: D -> d_tok, weights N(0, 1/sqrt(D)), bias kAbsorberBiasInit.
struct AbsorberAdapter {
    Linear m3;

    static AbsorberAdapter init(std::size_t embed_dim, std::size_t token_dim, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// A = relu(M3(mu)): [B x D] -> [B x d_tok]
ad::Var make_absorber(Graph& g, const AbsorberAdapter& adapter, ad::Var mu);

// Embedded prompts with the CLASS slot of prompt b replaced by row b of
// `absorber` (Replace), or with the row inserted after the CLASS token (Append,
// which makes each prompt one token longer). Returns [B*S' x d].
ad::Var inject_absorber(Graph& g, const TextEncoder& enc, const std::vector<PromptTokens>& prompts, ad::Var absorber,
                        TiaVariant variant = TiaVariant::Replace);

// A' = F_t(r'): full text pass over injected embeddings, [B x D].
ad::Var absorb(Graph& g, const TextEncoder& enc, ad::Var injected, std::size_t batch);

// -(1/N) sum_i cos(A'_i, f_i)
ad::Var vtt_loss(ad::Var absorbed, ad::Var features);

// L_ce + beta L_VtT
ad::Var combined_loss(ad::Var l_ce, ad::Var l_vtt, Scalar beta);

}  // namespace vtt::inline VTT_PRECISION_NS
