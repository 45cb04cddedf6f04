#include <gtest/gtest.h>

#include "support.hpp"
#include "vtt/encoders.hpp"
#include "vtt/errors.hpp"
#include "vtt/objective.hpp"

using namespace vtt;
using namespace vtt::testing;

namespace {

struct Fixture {
    EncoderConfig cfg;
    VisionEncoder vision;
    TextEncoder text;

    explicit Fixture(std::uint64_t seed, std::size_t layers = 4) {
        cfg.layers = layers;
        Rng rng(seed);
        vision = VisionEncoder::init(cfg, rng);
        text = TextEncoder::init(cfg, 5, rng);
    }
};

}  // namespace

TEST(EncodeImage, TraceLengthUnitNormAndDeterminism) {
    Fixture fx(1);
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor img = rng.normal_tensor({16, 16, 3}, 1);
        auto [f, trace] = encode_image(fx.vision, img);
        EXPECT_EQ(trace.tokens.size(), 4u);
        EXPECT_EQ(trace.attention.size(), 4u);
        for (const auto& t : trace.tokens) EXPECT_EQ(t.numel(), fx.cfg.d);
        EXPECT_NEAR(norm(f), 1.0, 1e-6);
        auto [f2, trace2] = encode_image(fx.vision, img);
        EXPECT_TRUE(f.bitwise_equal(f2));
    }
}

TEST(EncodeImage, BadGeometryIsDimensionError) {
    Fixture fx(1);
    EXPECT_THROW(encode_image(fx.vision, Tensor::zeros({15, 16, 3})), DimensionError);
    EXPECT_THROW(encode_image(fx.vision, Tensor::zeros({16, 16, 4})), DimensionError);
    EncoderConfig bad;
    bad.image_size = 18;
    EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(EncodeImage, LastTraceEntryReadsOutToFeature) {
    Fixture fx(3);
    Rng rng(4);
    Tensor img = rng.normal_tensor({16, 16, 3}, 1);
    auto [f, trace] = encode_image(fx.vision, img);
    Graph g(false);
    auto again = fx.vision.readout(g, g.constant(trace.tokens.back().reshape({1, fx.cfg.d}))).value();
    expect_tensor_near(again.reshape({fx.cfg.embed_dim}), f, 1e-6);
}

TEST(EncodeText, DeterministicUnitNormAndClassSensitive) {
    Fixture fx(5);
    auto [t0, tr0] = encode_text(fx.text, tokenize_prompt(fx.text.vocab, 0));
    auto [t0b, tr0b] = encode_text(fx.text, tokenize_prompt(fx.text.vocab, 0));
    auto [t1, tr1] = encode_text(fx.text, tokenize_prompt(fx.text.vocab, 1));
    EXPECT_TRUE(t0.bitwise_equal(t0b));
    EXPECT_NEAR(norm(t0), 1.0, 1e-6);
    EXPECT_EQ(tr0.tokens.size(), 4u);
    EXPECT_GT(max_abs_diff(t0, t1), 1e-3);
}

TEST(EncodeText, LastTraceEntryReadsOutToFeature) {
    Fixture fx(6);
    auto [t, trace] = encode_text(fx.text, tokenize_prompt(fx.text.vocab, 3));
    Graph g(false);
    auto again = fx.text.readout(g, g.constant(trace.tokens.back().reshape({1, fx.cfg.d}))).value();
    expect_tensor_near(again.reshape({fx.cfg.embed_dim}), t, 1e-6);
}

TEST(EncodeText, UnknownTokenIsVocabularyError) {
    Fixture fx(7);
    PromptTokens p = tokenize_prompt(fx.text.vocab, 0);
    p.ids[2] = 99;
    EXPECT_THROW(encode_text(fx.text, p), VocabularyError);
}

TEST(Tokenize, TemplateLayout) {
    Vocabulary vocab(5);
    auto a = tokenize_prompt(vocab, 0), b = tokenize_prompt(vocab, 1);
    ASSERT_EQ(a.ids.size(), 6u);
    EXPECT_EQ(a.class_pos, 4u);
    EXPECT_EQ(a.ids.back(), vocab.eos());
    for (std::size_t i = 0; i < 6; ++i) {
        if (i == 4) EXPECT_NE(a.ids[i], b.ids[i]);
        else EXPECT_EQ(a.ids[i], b.ids[i]);
    }
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(vocab.class_of_token(vocab.class_token(c)), c);
    EXPECT_THROW(tokenize_prompt(vocab, 5), VocabularyError);
    EXPECT_THROW(vocab.class_of_token(vocab.eos()), VocabularyError);
}

TEST(Patchify, RasterOrderWithinAndAcrossPatches) {
    std::vector<Scalar> v(4 * 4 * 2);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(i);
    Tensor img({4, 4, 2}, v);
    Tensor p = patchify(img, 2);
    ASSERT_EQ(p.shape(), (Shape{4, 8}));
    // patch 1 is rows 0-1, cols 2-3; element (dy=1, dx=0, c=1) sits at pixel (1, 2)
    EXPECT_EQ(p.at(1, (1 * 2 + 0) * 2 + 1), img[(1 * 4 + 2) * 2 + 1]);
    EXPECT_EQ(p.at(2, 0), img[(2 * 4 + 0) * 2]);
}

TEST(Masked, ZeroBlockMaskedEqualsUnmasked) {
    Fixture fx(8);
    fx.text.blocks[1].visit("b", [](const std::string& name, Param& p) {
        if (name.find("ln") == std::string::npos) p.value = Tensor::zeros(p.value.shape());
    });
    for (std::size_t c = 0; c < 5; ++c) {
        auto prompt = tokenize_prompt(fx.text.vocab, c);
        expect_tensor_near(encode_text_masked(fx.text, prompt, 2), encode_text(fx.text, prompt).first, 1e-6);
    }
}

TEST(Masked, EachLayerGivesADistinctOutput) {
    Fixture fx(9);
    auto prompt = tokenize_prompt(fx.text.vocab, 2);
    std::vector<Tensor> outs;
    for (std::size_t i = 1; i <= 4; ++i) outs.push_back(encode_text_masked(fx.text, prompt, i));
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(norm(outs[i]), 1.0, 1e-6);
        for (std::size_t j = i + 1; j < 4; ++j) EXPECT_GT(max_abs_diff(outs[i], outs[j]), 1e-4);
    }
}

TEST(Masked, EqualsEncoderBuiltWithoutTheBlock) {
    Fixture fx(10);
    for (std::size_t i = 1; i <= 4; ++i) {
        TextEncoder pruned = fx.text;
        pruned.blocks.erase(pruned.blocks.begin() + static_cast<std::ptrdiff_t>(i - 1));
        for (std::size_t c = 0; c < 5; ++c) {
            auto prompt = tokenize_prompt(fx.text.vocab, c);
            expect_tensor_near(encode_text_masked(fx.text, prompt, i), encode_text(pruned, prompt).first, 1e-6);
        }
    }
}

TEST(Masked, SingleLayerEncoderReducesToEmbeddingReadout) {
    Fixture fx(11, 1);
    auto prompt = tokenize_prompt(fx.text.vocab, 1);
    Graph g(false);
    auto emb = ad::add(fx.text.embed(g, {prompt}), ad::slice(g(fx.text.pos), 0, 0, 6));
    auto expected = fx.text.readout(g, ad::slice(emb, 0, 5, 1)).value();
    expect_tensor_near(encode_text_masked(fx.text, prompt, 1), expected.reshape({fx.cfg.embed_dim}), 1e-6);
}

TEST(Masked, OutOfRangeLayerIsParameterError) {
    Fixture fx(12);
    auto prompt = tokenize_prompt(fx.text.vocab, 0);
    EXPECT_THROW(encode_text_masked(fx.text, prompt, 0), ParameterError);
    EXPECT_THROW(encode_text_masked(fx.text, prompt, 5), ParameterError);
}

TEST(Emphasize, Endpoints) {
    Tensor t = Tensor::vector({1, 2, 3}), ti = Tensor::vector({-1, 0, 5});
    EXPECT_TRUE(emphasize_layer(t, ti, 0).bitwise_equal(t));
    EXPECT_TRUE(emphasize_layer(t, ti, 1).bitwise_equal(ti));
    auto mid = emphasize_layer(t, ti, Scalar(0.2));
    EXPECT_FLOAT_EQ(mid[0], 0.8f * 1 + 0.2f * -1);
    EXPECT_FLOAT_EQ(mid[2], 0.8f * 3 + 0.2f * 5);
    EXPECT_THROW(emphasize_layer(t, ti, Scalar(-0.1)), ParameterError);
    EXPECT_THROW(emphasize_layer(t, ti, Scalar(1.1)), ParameterError);
}

TEST(Emphasize, ZeroGammaKeepsClassifierPredictions) {
    Fixture fx(13);
    Rng rng(14);
    Tensor plain = class_text_features(fx.text);
    Tensor images = rng.normal_tensor({20, 16, 16, 3}, 1);
    Graph g(false);
    Tensor f = fx.vision.forward(g, images).features.value();
    for (std::size_t i = 1; i <= 4; ++i) {
        Tensor emph = class_text_features_emphasized(fx.text, i, 0);
        expect_tensor_near(emph, plain, 1e-6);
        EXPECT_EQ(predict(similarity(f, emph)), predict(similarity(f, plain)));
        // nonzero gamma changes the classifier but keeps unit rows
        Tensor e2 = class_text_features_emphasized(fx.text, i, Scalar(0.2));
        for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(norm(e2.row(k)), 1.0, 1e-6);
    }
}

TEST(ClassTraces, RawTokensPerLayer) {
    Fixture fx(15);
    auto traces = class_text_traces(fx.text);
    ASSERT_EQ(traces.size(), 4u);
    for (std::size_t k = 0; k < 5; ++k) {
        auto [t, tr] = encode_text(fx.text, tokenize_prompt(fx.text.vocab, k));
        for (std::size_t j = 0; j < 4; ++j) expect_tensor_near(traces[j].row(k), tr.tokens[j], 1e-5);
    }
}
