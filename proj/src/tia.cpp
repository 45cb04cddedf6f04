#include "vtt/tia.hpp"

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::string to_string(TiaVariant v) { return v == TiaVariant::Replace ? "replace" : "append"; }

TiaVariant parse_tia_variant(const std::string& s) {
    if (s == "replace") return TiaVariant::Replace;
    if (s == "append") return TiaVariant::Append;
    throw ParameterError("unknown TIA variant '" + s + "'");
}

AbsorberAdapter AbsorberAdapter::init(std::size_t embed_dim, std::size_t token_dim, Rng& rng) {
    // A positive bias keeps the ReLU open while mu is still zero, otherwise no
    // gradient reaches the fusion network at the start.
    Linear m3 = Linear::init(embed_dim, token_dim, rng);
    m3.bias.value = Tensor::full({token_dim}, kAbsorberBiasInit);
    return AbsorberAdapter{m3};
}

void AbsorberAdapter::visit(const std::string& prefix, const ParamVisitor& fn) { m3.visit(prefix + ".m3", fn); }

ad::Var make_absorber(Graph& g, const AbsorberAdapter& adapter, ad::Var mu) {
    if (mu.shape().back() != adapter.m3.in_dim()) {
        throw DimensionError("absorber expects " + std::to_string(adapter.m3.in_dim()) + "-dim input, got " +
                             shape_str(mu.shape()));
    }
    return ad::relu(adapter.m3.forward(g, mu));
}

ad::Var inject_absorber(Graph& g, const TextEncoder& enc, const std::vector<PromptTokens>& prompts, ad::Var absorber,
                        TiaVariant variant) {
    const std::size_t B = prompts.size(), d = enc.cfg.d;
    if (absorber.shape() != Shape{B, d}) {
        throw DimensionError("absorber " + shape_str(absorber.shape()) + " does not match " + std::to_string(B) +
                             " prompts of width " + std::to_string(d));
    }
    for (const auto& p : prompts) {
        if (p.class_pos >= p.ids.size() || p.class_pos + 1 >= p.ids.size()) throw ContractError("prompt has no CLASS slot");
        if (p.ids[p.class_pos] < Vocabulary::kTemplateTokens || p.ids[p.class_pos] >= enc.vocab.eos()) {
            throw ContractError("prompt has no CLASS slot at position " + std::to_string(p.class_pos + 1));
        }
    }
    ad::Var emb = enc.embed(g, prompts);
    const std::size_t S = Vocabulary::kPromptLength;
    std::vector<ad::Var> parts;
    parts.reserve(3 * B);
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t pos = prompts[b].class_pos;
        ad::Var a = ad::slice(absorber, 0, b, 1);
        if (variant == TiaVariant::Replace) {
            parts.push_back(ad::slice(emb, 0, b * S, pos));
            parts.push_back(a);
            parts.push_back(ad::slice(emb, 0, b * S + pos + 1, S - pos - 1));
        } else {
            parts.push_back(ad::slice(emb, 0, b * S, pos + 1));
            parts.push_back(a);
            parts.push_back(ad::slice(emb, 0, b * S + pos + 1, S - pos - 1));
        }
    }
    return ad::concat(parts, 0);
}

ad::Var absorb(Graph& g, const TextEncoder& enc, ad::Var injected, std::size_t batch) {
    return enc.forward_embedded(g, injected, batch).features;
}

ad::Var vtt_loss(ad::Var absorbed, ad::Var features) {
    if (absorbed.shape() != features.shape() || absorbed.value().rank() != 2) {
        throw DimensionError("vtt_loss: " + shape_str(absorbed.shape()) + " vs " + shape_str(features.shape()));
    }
    const auto n = static_cast<Scalar>(absorbed.shape()[0]);
    ad::Var cos_sum = ad::sum(ad::mul(ad::l2_normalize(absorbed), ad::l2_normalize(features)));
    return ad::scale(cos_sum, -1 / n);
}

ad::Var combined_loss(ad::Var l_ce, ad::Var l_vtt, Scalar beta) {
    if (!(beta >= 0)) throw ParameterError("beta must be >= 0");
    return ad::add(l_ce, ad::scale(l_vtt, beta));
}

}  // namespace vtt::inline VTT_PRECISION_NS
