#include "vtt/encoders.hpp"

#include <algorithm>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

void EncoderConfig::validate() const {
    if (d == 0 || heads == 0 || layers == 0 || mlp_ratio == 0 || embed_dim == 0 || patch == 0 || channels == 0) {
        throw ParameterError("encoder sizes must be positive");
    }
    if (d % heads != 0) throw DimensionError("d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
    if (image_size == 0 || image_size % patch != 0) {
        throw DimensionError("image size " + std::to_string(image_size) + " not divisible by patch " +
                             std::to_string(patch));
    }
}

Vocabulary::Vocabulary(std::size_t num_classes) : num_classes_(num_classes) {
    if (num_classes == 0) throw ParameterError("vocabulary needs at least one class");
}

std::size_t Vocabulary::class_token(std::size_t class_id) const {
    if (class_id >= num_classes_) throw VocabularyError("unknown class " + std::to_string(class_id));
    return kTemplateTokens + class_id;
}

std::size_t Vocabulary::class_of_token(std::size_t token) const {
    if (token < kTemplateTokens || token >= kTemplateTokens + num_classes_) {
        throw VocabularyError("token " + std::to_string(token) + " is not a class token");
    }
    return token - kTemplateTokens;
}

PromptTokens tokenize_prompt(const Vocabulary& vocab, std::size_t class_id) {
    PromptTokens p;
    p.ids = {0, 1, 2, 3, vocab.class_token(class_id), vocab.eos()};
    return p;
}

Tensor patchify(const Tensor& images, std::size_t patch) {
    if (images.rank() != 3 && images.rank() != 4) {
        throw DimensionError("images must be [H x W x C] or [B x H x W x C], got " + shape_str(images.shape()));
    }
    const std::size_t off = images.rank() - 3;
    const std::size_t B = off ? images.dim(0) : 1;
    const std::size_t H = images.dim(off), W = images.dim(off + 1), C = images.dim(off + 2);
    if (patch == 0 || H % patch != 0 || W % patch != 0) {
        throw DimensionError("image " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch " +
                             std::to_string(patch));
    }
    const std::size_t gh = H / patch, gw = W / patch, pd = patch * patch * C;
    const auto& src = images.data();
    std::vector<Scalar> out(B * gh * gw * pd);
    std::size_t k = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px)
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx)
                        for (std::size_t c = 0; c < C; ++c)
                            out[k++] = src[((b * H + py * patch + dy) * W + px * patch + dx) * C + c];
    return Tensor({B * gh * gw, pd}, std::move(out));
}

namespace {

Param ones(std::size_t d) { return Param{Tensor::full({d}, 1), true}; }
Param zeros(std::size_t d) { return Param{Tensor::zeros({d}), true}; }

ad::Var tile_rows(ad::Var x, std::size_t times) { return ad::concat(std::vector<ad::Var>(times, x), 0); }

std::vector<std::size_t> strided_rows(std::size_t batch, std::size_t stride, std::size_t offset) {
    std::vector<std::size_t> ids(batch);
    for (std::size_t b = 0; b < batch; ++b) ids[b] = b * stride + offset;
    return ids;
}

Tensor single_row(const Tensor& t, std::size_t r) { return t.row(r); }

}  // namespace

VisionEncoder VisionEncoder::init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    VisionEncoder e;
    e.cfg = cfg;
    const std::size_t pd = cfg.patch * cfg.patch * cfg.channels;
    e.patch_embed = Linear::init(pd, cfg.d, rng);
    e.cls = Param{rng.normal_tensor({cfg.d}, Scalar(0.5)), true};
    e.pos = Param{rng.normal_tensor({cfg.patches() + 1, cfg.d}, Scalar(0.1)), true};
    for (std::size_t i = 0; i < cfg.layers; ++i) e.blocks.push_back(TransformerBlock::init(cfg.d, cfg.heads, cfg.mlp_ratio, rng));
    e.ln_gain = ones(cfg.d);
    e.ln_bias = zeros(cfg.d);
    e.proj = Linear::init(cfg.d, cfg.embed_dim, rng, false);
    return e;
}

EncoderPass VisionEncoder::forward(Graph& g, const Tensor& images) const {
    const std::size_t off = images.rank() == 4 ? 1 : 0;
    if (images.rank() < 3 || images.dim(off) != cfg.image_size || images.dim(off + 1) != cfg.image_size ||
        images.dim(off + 2) != cfg.channels) {
        throw DimensionError("vision encoder expects " + std::to_string(cfg.image_size) + "x" +
                             std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels) + " images, got " +
                             shape_str(images.shape()));
    }
    const std::size_t B = off ? images.dim(0) : 1;
    const std::size_t P = cfg.patches(), T = P + 1;
    ad::Var emb = patch_embed.forward(g, g.constant(patchify(images, cfg.patch)));
    ad::Var cls_row = ad::reshape(g(cls), {1, cfg.d});
    std::vector<ad::Var> parts;
    parts.reserve(2 * B);
    for (std::size_t b = 0; b < B; ++b) {
        parts.push_back(cls_row);
        parts.push_back(ad::slice(emb, 0, b * P, P));
    }
    ad::Var x = ad::add(ad::concat(parts, 0), tile_rows(g(pos), B));

    EncoderPass pass;
    const auto cls_ids = strided_rows(B, T, 0);
    for (const auto& block : blocks) {
        auto out = block.forward(g, x, B);
        x = out.output;
        pass.trace.push_back(ad::embedding(x, cls_ids));
        pass.attention.push_back(std::move(out.weights));
    }
    ad::Var summary = pass.trace.empty() ? ad::embedding(x, cls_ids) : pass.trace.back();
    pass.features = readout(g, summary);
    return pass;
}

ad::Var VisionEncoder::readout(Graph& g, ad::Var summary) const {
    return ad::l2_normalize(proj.forward(g, ad::layer_norm(summary, g(ln_gain), g(ln_bias))));
}

void VisionEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
    patch_embed.visit(prefix + ".patch_embed", fn);
    fn(prefix + ".cls", cls);
    fn(prefix + ".pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i + 1), fn);
    fn(prefix + ".ln.gain", ln_gain);
    fn(prefix + ".ln.bias", ln_bias);
    proj.visit(prefix + ".proj", fn);
}

TextEncoder TextEncoder::init(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng) {
    cfg.validate();
    TextEncoder e;
    e.cfg = cfg;
    e.vocab = Vocabulary(num_classes);
    e.token_embed = Param{rng.normal_tensor({e.vocab.size(), cfg.d}, Scalar(1)), true};
    e.pos = Param{rng.normal_tensor({Vocabulary::kMaxSequence, cfg.d}, Scalar(0.1)), true};
    for (std::size_t i = 0; i < cfg.layers; ++i) e.blocks.push_back(TransformerBlock::init(cfg.d, cfg.heads, cfg.mlp_ratio, rng));
    e.ln_gain = ones(cfg.d);
    e.ln_bias = zeros(cfg.d);
    e.proj = Linear::init(cfg.d, cfg.embed_dim, rng, false);
    return e;
}

ad::Var TextEncoder::embed(Graph& g, const std::vector<PromptTokens>& prompts) const {
    if (prompts.empty()) throw DimensionError("no prompts to embed");
    std::vector<std::size_t> ids;
    for (const auto& p : prompts) {
        if (p.ids.size() != Vocabulary::kPromptLength) {
            throw DimensionError("prompt length " + std::to_string(p.ids.size()) + ", expected " +
                                 std::to_string(Vocabulary::kPromptLength));
        }
        if (p.ids.back() != vocab.eos()) throw ContractError("prompt must end with EOS");
        for (auto id : p.ids) {
            if (id >= vocab.size()) throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
        }
        ids.insert(ids.end(), p.ids.begin(), p.ids.end());
    }
    return ad::embedding(g(token_embed), ids);
}

EncoderPass TextEncoder::forward_embedded(Graph& g, ad::Var embedded, std::size_t batch,
                                          const std::vector<std::size_t>& skip) const {
    const std::size_t rows = embedded.shape()[0];
    if (batch == 0 || embedded.value().rank() != 2 || embedded.shape()[1] != cfg.d || rows % batch != 0) {
        throw DimensionError("embedded prompts " + shape_str(embedded.shape()) + " do not match batch " +
                             std::to_string(batch));
    }
    const std::size_t S = rows / batch;
    if (S > pos.value.dim(0)) throw DimensionError("prompt longer than the position table");
    for (auto i : skip) {
        if (i < 1 || i > blocks.size()) {
            throw ParameterError("masked layer " + std::to_string(i) + " outside 1.." + std::to_string(blocks.size()));
        }
    }
    ad::Var p = S == pos.value.dim(0) ? g(pos) : ad::slice(g(pos), 0, 0, S);
    ad::Var x = ad::add(embedded, tile_rows(p, batch));
    EncoderPass pass;
    const auto eos_ids = strided_rows(batch, S, S - 1);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (std::find(skip.begin(), skip.end(), i + 1) == skip.end()) {
            auto out = blocks[i].forward(g, x, batch);
            x = out.output;
            pass.attention.push_back(std::move(out.weights));
        } else {
            pass.attention.push_back(Tensor());
        }
        pass.trace.push_back(ad::embedding(x, eos_ids));
    }
    ad::Var summary = pass.trace.empty() ? ad::embedding(x, eos_ids) : pass.trace.back();
    pass.features = readout(g, summary);
    return pass;
}

EncoderPass TextEncoder::forward(Graph& g, const std::vector<PromptTokens>& prompts,
                                 const std::vector<std::size_t>& skip) const {
    return forward_embedded(g, embed(g, prompts), prompts.size(), skip);
}

ad::Var TextEncoder::readout(Graph& g, ad::Var summary) const {
    return ad::l2_normalize(proj.forward(g, ad::layer_norm(summary, g(ln_gain), g(ln_bias))));
}

void TextEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".token_embed", token_embed);
    fn(prefix + ".pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i + 1), fn);
    fn(prefix + ".ln.gain", ln_gain);
    fn(prefix + ".ln.bias", ln_bias);
    proj.visit(prefix + ".proj", fn);
}

namespace {

std::pair<Tensor, LayerTrace> collect(const EncoderPass& pass) {
    LayerTrace trace;
    for (const auto& t : pass.trace) trace.tokens.push_back(single_row(t.value(), 0));
    trace.attention = pass.attention;
    return {single_row(pass.features.value(), 0), std::move(trace)};
}

std::vector<PromptTokens> all_class_prompts(const TextEncoder& enc) {
    std::vector<PromptTokens> prompts;
    for (std::size_t c = 0; c < enc.vocab.num_classes(); ++c) prompts.push_back(tokenize_prompt(enc.vocab, c));
    return prompts;
}

}  // namespace

std::pair<Tensor, LayerTrace> encode_image(const VisionEncoder& enc, const Tensor& image) {
    if (image.rank() != 3) throw DimensionError("encode_image expects one [H x W x C] image");
    Graph g(false);
    return collect(enc.forward(g, image));
}

std::pair<Tensor, LayerTrace> encode_text(const TextEncoder& enc, const PromptTokens& prompt) {
    Graph g(false);
    return collect(enc.forward(g, {prompt}));
}

Tensor encode_text_masked(const TextEncoder& enc, const PromptTokens& prompt, std::size_t layer) {
    Graph g(false);
    return single_row(enc.forward(g, {prompt}, {layer}).features.value(), 0);
}

Tensor emphasize_layer(const Tensor& t, const Tensor& t_i, Scalar gamma) {
    if (!(gamma >= 0 && gamma <= 1)) throw ParameterError("gamma must lie in [0, 1]");
    if (!t.same_shape(t_i)) {
        throw DimensionError("emphasize: " + shape_str(t.shape()) + " vs " + shape_str(t_i.shape()));
    }
    std::vector<Scalar> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1 - gamma) * t[i] + gamma * t_i[i];
    return Tensor(t.shape(), std::move(out));
}

Tensor class_text_features(const TextEncoder& enc) {
    Graph g(false);
    return enc.forward(g, all_class_prompts(enc)).features.value();
}

Tensor class_text_features_masked(const TextEncoder& enc, std::size_t layer) {
    Graph g(false);
    return enc.forward(g, all_class_prompts(enc), {layer}).features.value();
}

Tensor class_text_features_emphasized(const TextEncoder& enc, std::size_t layer, Scalar gamma) {
    if (layer < 1 || layer > enc.blocks.size()) throw ParameterError("emphasized layer out of range");
    Graph g(false);
    auto pass = enc.forward(g, all_class_prompts(enc));
    const Tensor& t = pass.features.value();
    const Tensor& ti = pass.trace[layer - 1].value();
    Graph g2(false);
    return ad::l2_normalize(g2.constant(emphasize_layer(t, ti, gamma))).value();
}

std::vector<Tensor> class_text_traces(const TextEncoder& enc) {
    Graph g(false);
    auto pass = enc.forward(g, all_class_prompts(enc));
    std::vector<Tensor> out;
    for (const auto& t : pass.trace) out.push_back(t.value());
    return out;
}

}  // namespace vtt::inline VTT_PRECISION_NS
