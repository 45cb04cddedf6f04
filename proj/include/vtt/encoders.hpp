#pragma once

#include <utility>
#include <vector>

#include "vtt/nn.hpp"

namespace vtt::inline VTT_PRECISION_NS {

struct EncoderConfig {
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t layers = 4;
    std::size_t mlp_ratio = 4;
    std::size_t embed_dim = 32;  // D, the joint embedding size
    std::size_t image_size = 16;
    std::size_t patch = 4;
    std::size_t channels = 3;

    void validate() const;
    std::size_t patches() const { return (image_size / patch) * (image_size / patch); }
};

// Per-layer summary tokens (CLS for vision, EOS for text), shallow to deep,
// taken raw from the residual stream.
struct LayerTrace {
    std::vector<Tensor> tokens;     // l x [d]
    std::vector<Tensor> attention;  // l x [h x T x T]
};

struct EncoderPass {
    ad::Var features;               // [B x D], unit rows
    std::vector<ad::Var> trace;     // l x [B x d]
    std::vector<Tensor> attention;  // l x [B*h x T x T]
};

// Token ids: 0..3 template words, then one per class, then EOS.
class Vocabulary {
   public:
    static constexpr std::size_t kTemplateTokens = 4;
    static constexpr std::size_t kPromptLength = 6;
    static constexpr std::size_t kClassPosition = 4;  // 0-based; the fifth token
    // Room for one extra injected token.
    static constexpr std::size_t kMaxSequence = kPromptLength + 1;

    explicit Vocabulary(std::size_t num_classes = 5);
    std::size_t num_classes() const { return num_classes_; }
    std::size_t size() const { return kTemplateTokens + num_classes_ + 1; }
    std::size_t class_token(std::size_t class_id) const;
    std::size_t class_of_token(std::size_t token) const;
    std::size_t eos() const { return kTemplateTokens + num_classes_; }

   private:
    std::size_t num_classes_;
};

struct PromptTokens {
    std::vector<std::size_t> ids;
    std::size_t class_pos = Vocabulary::kClassPosition;
};

// [T1, T2, T3, T4, CLASS_c, EOS]
PromptTokens tokenize_prompt(const Vocabulary& vocab, std::size_t class_id);

// images: [B x H x W x C] (or one [H x W x C]) -> [B*P x p*p*C], patches in
// raster order, each flattened as (dy, dx, c).
Tensor patchify(const Tensor& images, std::size_t patch);

struct VisionEncoder {
    EncoderConfig cfg;
    Linear patch_embed;
    Param cls;  // [d]
    Param pos;  // [(P+1) x d]
    std::vector<TransformerBlock> blocks;
    Param ln_gain, ln_bias;
    Linear proj;  // d -> D, no bias

    static VisionEncoder init(const EncoderConfig& cfg, Rng& rng);
    std::size_t sequence_length() const { return cfg.patches() + 1; }
    EncoderPass forward(Graph& g, const Tensor& images) const;
    // Final norm, projection and l2 normalization of [B x d] summary tokens.
    ad::Var readout(Graph& g, ad::Var summary) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct TextEncoder {
    EncoderConfig cfg;
    Vocabulary vocab;
    Param token_embed;  // [V x d]
    Param pos;          // [kMaxSequence x d]
    std::vector<TransformerBlock> blocks;
    Param ln_gain, ln_bias;
    Linear proj;

    static TextEncoder init(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng);

    // Token embeddings without positions: [B*S x d].
    ad::Var embed(Graph& g, const std::vector<PromptTokens>& prompts) const;
    // `embedded` holds `batch` sequences of equal length ending in EOS.
    // `skip` lists 1-based block indices that are bypassed (the residual
    // stream passes through unchanged; the trace repeats the previous entry).
    EncoderPass forward_embedded(Graph& g, ad::Var embedded, std::size_t batch,
                                 const std::vector<std::size_t>& skip = {}) const;
    EncoderPass forward(Graph& g, const std::vector<PromptTokens>& prompts,
                        const std::vector<std::size_t>& skip = {}) const;
    ad::Var readout(Graph& g, ad::Var summary) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

std::pair<Tensor, LayerTrace> encode_image(const VisionEncoder& enc, const Tensor& image);
std::pair<Tensor, LayerTrace> encode_text(const TextEncoder& enc, const PromptTokens& prompt);
// Text embedding with block `layer` (1-based) skipped, renormalized.
Tensor encode_text_masked(const TextEncoder& enc, const PromptTokens& prompt, std::size_t layer);

// (1 - gamma) t + gamma t_i, not renormalized.
Tensor emphasize_layer(const Tensor& t, const Tensor& t_i, Scalar gamma);

// Class embeddings [K x D] for every registered class, no gradient.
Tensor class_text_features(const TextEncoder& enc);
Tensor class_text_features_masked(const TextEncoder& enc, std::size_t layer);
// Emphasize variant: rows are l2_normalize((1-gamma) t_k + gamma t_k^layer) with
// t_k^layer the raw EOS token after block `layer`; needs d == D.
Tensor class_text_features_emphasized(const TextEncoder& enc, std::size_t layer, Scalar gamma);
// Per-class raw EOS traces: l entries of [K x d].
std::vector<Tensor> class_text_traces(const TextEncoder& enc);

}  // namespace vtt::inline VTT_PRECISION_NS
