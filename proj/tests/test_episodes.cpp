#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "support.hpp"
#include "vtt/errors.hpp"
#include "vtt/model.hpp"
#include "vtt/objective.hpp"

using namespace vtt;
using namespace vtt::testing;

namespace {

SyntheticSpec small_spec(std::size_t per_class = 20) {
    SyntheticSpec s;
    s.per_class = per_class;
    return s;
}

double pixel_distance(const Dataset& d, std::size_t i, std::size_t j) {
    const std::size_t n = d.images.numel() / d.size();
    double s = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double diff = static_cast<double>(d.images[i * n + k]) - d.images[j * n + k];
        s += diff * diff;
    }
    return std::sqrt(s);
}

}  // namespace

TEST(Generator, DeterministicInSeed) {
    auto a = generate_synthetic(small_spec(4), 11), b = generate_synthetic(small_spec(4), 11);
    auto c = generate_synthetic(small_spec(4), 12);
    EXPECT_TRUE(a.images.bitwise_equal(b.images));
    EXPECT_EQ(a.id, b.id);
    EXPECT_FALSE(a.images.bitwise_equal(c.images));
    EXPECT_NE(a.id, c.id);
    EXPECT_EQ(a.size(), 5u * 2u * 4u);
    EXPECT_EQ(a.num_domains(), 2u);
    EXPECT_EQ(a.images.shape(), (Shape{40, 16, 16, 3}));
}

TEST(Generator, NoiselessIdentityStyleGivesIdenticalClassImages) {
    SyntheticSpec s = small_spec(3);
    s.max_shift = 0;
    s.amplitude_jitter = 0;
    s.clutter = 0;
    s.domains = {DomainStyle{{1, 1, 1}, {0, 0, 0}, 0.0, false}, DomainStyle{{1, 1, 1}, {0, 0, 0}, 0.0, false}};
    auto d = generate_synthetic(s, 3);
    for (std::size_t k = 0; k < 5; ++k) {
        auto idx = d.indices(k, 0), other = d.indices(k, 1);
        for (auto i : idx) EXPECT_TRUE(d.image(i).bitwise_equal(d.image(idx[0])));
        // same pattern across domains
        EXPECT_TRUE(d.image(other[0]).bitwise_equal(d.image(idx[0])));
    }
    EXPECT_FALSE(d.image(d.indices(0, 0)[0]).bitwise_equal(d.image(d.indices(1, 0)[0])));
}

TEST(Generator, InvalidSpecIsParameterError) {
    SyntheticSpec s;
    s.domains[1].noise = -0.1;
    EXPECT_THROW(generate_synthetic(s, 0), ParameterError);
    SyntheticSpec one;
    one.num_classes = 1;
    EXPECT_THROW(generate_synthetic(one, 0), ParameterError);
    SyntheticSpec none;
    none.domains.clear();
    EXPECT_THROW(generate_synthetic(none, 0), ParameterError);
}

TEST(Generator, SpecJsonRoundTrip) {
    SyntheticSpec s;
    s.domains[1].permute_patches = true;
    auto back = SyntheticSpec::from_json(s.to_json());
    EXPECT_EQ(back.to_json().dump(), s.to_json().dump());
}

TEST(Generator, InterClassDistanceExceedsCrossDomainIntraClass) {
    // Raw pixel metric, default spec; the margin is checked for a few seeds.
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto d = generate_synthetic(small_spec(10), seed);
        double inter = 0, intra = 0;
        std::size_t n_inter = 0, n_intra = 0;
        for (std::size_t i = 0; i < d.size(); ++i)
            for (std::size_t j = i + 1; j < d.size(); ++j) {
                if (d.labels[i] != d.labels[j]) {
                    inter += pixel_distance(d, i, j);
                    ++n_inter;
                } else if (d.domains[i] != d.domains[j]) {
                    intra += pixel_distance(d, i, j);
                    ++n_intra;
                }
            }
        inter /= static_cast<double>(n_inter);
        intra /= static_cast<double>(n_intra);
        EXPECT_GT(inter, 1.05 * intra) << "seed " << seed << ": inter " << inter << " intra " << intra;
    }
}

TEST(SampleEpisode, SizesAndLabels) {
    auto d = generate_synthetic(small_spec(20), 1);
    Rng rng(2);
    auto ep = sample_episode(d, 5, 1, 15, rng, 1);
    EXPECT_EQ(ep.support.size(), 5u);
    EXPECT_EQ(ep.query.size(), 75u);
    EXPECT_EQ(ep.classes, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
        EXPECT_EQ(d.labels[ep.support[i]], ep.classes[ep.support_labels[i]]);
        EXPECT_EQ(d.domains[ep.support[i]], 1u);
    }
    for (std::size_t c = 0; c < 5; ++c)
        EXPECT_EQ(std::count(ep.query_labels.begin(), ep.query_labels.end(), c), 15);
    Rng again(2);
    auto ep2 = sample_episode(d, 5, 1, 15, again, 1);
    EXPECT_EQ(ep.support, ep2.support);
    EXPECT_EQ(ep.query, ep2.query);
}

TEST(SampleEpisode, SupportAndQueryDisjointOverManyEpisodes) {
    auto d = generate_synthetic(small_spec(8), 3);
    Rng rng(4);
    for (int trial = 0; trial < 10000; ++trial) {
        Rng r = rng.split(static_cast<std::uint64_t>(trial));
        const std::size_t n = 2 + r.below(4), k = 1 + r.below(3), m = 1 + r.below(8 - k);
        auto ep = sample_episode(d, n, k, m, r, r.below(2));
        std::set<std::size_t> s(ep.support.begin(), ep.support.end());
        ASSERT_EQ(s.size(), n * k);
        std::set<std::size_t> q(ep.query.begin(), ep.query.end());
        ASSERT_EQ(q.size(), n * m);
        for (auto i : ep.query) ASSERT_EQ(s.count(i), 0u);
    }
}

TEST(SampleEpisode, InsufficientSamplesIsDataError) {
    auto d = generate_synthetic(small_spec(5), 5);
    Rng rng(6);
    EXPECT_THROW(sample_episode(d, 5, 1, 15, rng, 0), DataError);
    EXPECT_THROW(sample_episode(d, 6, 1, 1, rng, 0), DataError);
    EXPECT_THROW(sample_episode(d, 0, 1, 1, rng, 0), ParameterError);
}

TEST(SampleEpisode, RelabelingCommutesWithSampling) {
    auto d = generate_synthetic(small_spec(6), 7);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Dataset relabeled = d;
    for (auto& l : relabeled.labels) l = perm[l];
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng r1(seed), r2(seed);
        auto a = sample_episode(d, 5, 2, 3, r1, 0);
        auto b = sample_episode(relabeled, 5, 2, 3, r2, 0);
        // Same draws per episode position, mapped through the permuted class pools.
        for (std::size_t i = 0; i < a.support.size(); ++i) {
            const std::size_t label = a.support_labels[i];
            const auto pool_a = d.indices(a.classes[label], 0);
            const std::size_t orig_class = static_cast<std::size_t>(
                std::find(perm.begin(), perm.end(), b.classes[label]) - perm.begin());
            const auto pool_b = d.indices(orig_class, 0);
            const auto rank = std::find(pool_a.begin(), pool_a.end(), a.support[i]) - pool_a.begin();
            EXPECT_EQ(b.support[i], pool_b[static_cast<std::size_t>(rank)]);
            EXPECT_EQ(relabeled.labels[b.support[i]], b.classes[b.support_labels[i]]);
        }
    }
}

TEST(SampleEpisode, ClassSelectionIsUniform) {
    auto d = generate_synthetic(small_spec(2), 8);
    Rng rng(9);
    std::vector<int> counts(5, 0);
    const int trials = 5000;
    for (int t = 0; t < trials; ++t) {
        auto ep = sample_episode(d, 2, 1, 1, rng, 0);
        for (auto c : ep.classes) ++counts[c];
    }
    for (int c : counts) EXPECT_NEAR(c / static_cast<double>(trials), 0.4, 0.03);
}

TEST(Augment, MultiplierOneIsIdentity) {
    Rng rng(10);
    Tensor imgs = rng.normal_tensor({3, 4, 4, 3}, 1);
    auto out = augment_support(imgs, {0, 1, 2}, 1, Scalar(0.02), rng);
    EXPECT_TRUE(out.images.bitwise_equal(imgs));
    EXPECT_EQ(out.labels, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Augment, MultiplierFourFlipsAndJitters) {
    Rng rng(11);
    Tensor imgs = rng.normal_tensor({5, 4, 4, 3}, 1);
    std::vector<std::size_t> labels{0, 1, 2, 3, 4};
    auto out = augment_support(imgs, labels, 4, 0, rng);
    ASSERT_EQ(out.images.shape(), (Shape{20, 4, 4, 3}));
    ASSERT_EQ(out.labels.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(out.labels[i], labels[i % 5]);
    // copy 1 is a horizontal flip of the original (no jitter here)
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                EXPECT_EQ(out.images[((5 * 4 + y) * 4 + x) * 3 + c], imgs[((0 * 4 + y) * 4 + (3 - x)) * 3 + c]);
    auto jittered = augment_support(imgs, labels, 4, Scalar(0.02), rng);
    for (std::size_t i = 0; i < 5 * 48; ++i) EXPECT_EQ(jittered.images[i], imgs[i]);
    const double diff = max_abs_diff(jittered.images.reshape({20, 48}).row(10), out.images.reshape({20, 48}).row(10));
    EXPECT_GT(diff, 0);
    EXPECT_LT(diff, 0.2);
    EXPECT_THROW(augment_support(imgs, labels, 0, 0, rng), ParameterError);
    EXPECT_THROW(augment_support(imgs, {0, 1}, 2, 0, rng), DimensionError);
}

TEST(FeatureArchive, RoundTripIsBitExact) {
    TempDir dir("archive");
    Rng rng(12);
    FeatureArchive a;
    a.tensors.emplace("features", rng.normal_tensor({6, 4}, 1));
    a.tensors.emplace("layer_1", rng.normal_tensor({6, 3}, 1));
    a.labels = {0, 0, 1, 1, 2, 2};
    a.domains = {0, 1, 0, 1, 0, 1};
    a.meta["source"] = "unit";
    save_feature_archive(dir.path(), a);
    auto b = load_feature_archive(dir.path());
    EXPECT_EQ(b.labels, a.labels);
    EXPECT_EQ(b.domains, a.domains);
    EXPECT_EQ(b.meta["source"], "unit");
    for (const auto& [name, t] : a.tensors) EXPECT_TRUE(b.tensors.at(name).bitwise_equal(t));
}

TEST(FeatureArchive, TruncatedTensorIsFormatError) {
    TempDir dir("truncated");
    FeatureArchive a;
    a.tensors.emplace("features", Tensor::full({4, 8}, 1.5f));
    a.labels = {0, 1, 0, 1};
    save_feature_archive(dir.path(), a);
    const auto file = dir / "features.vtt";
    std::filesystem::resize_file(file, std::filesystem::file_size(file) - 5);
    EXPECT_THROW(load_feature_archive(dir.path()), FormatError);
}

TEST(FeatureArchive, LabelCountMismatchIsIntegrityError) {
    TempDir dir("mismatch");
    FeatureArchive a;
    a.tensors.emplace("features", Tensor::full({4, 2}, 1));
    a.labels = {0, 1, 0};
    save_feature_archive(dir.path(), a);
    EXPECT_THROW(load_feature_archive(dir.path()), IntegrityError);
    EXPECT_THROW(load_feature_archive(dir / "missing"), IoError);
}

TEST(Dataset, SaveLoadRoundTrip) {
    TempDir dir("dataset");
    auto d = generate_synthetic(small_spec(2), 13);
    save_dataset(dir.path(), d);
    auto back = load_dataset(dir.path());
    EXPECT_TRUE(back.images.bitwise_equal(d.images));
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.domains, d.domains);
    EXPECT_EQ(back.id, d.id);
    EXPECT_EQ(back.num_classes, 5u);
}

TEST(Generator, SourceTrainedModelLosesAccuracyOnTarget) {
    auto data = generate_synthetic(SyntheticSpec{}, 0);
    EncoderConfig cfg;
    Rng rng(0);
    DualEncoder model = DualEncoder::init(cfg, 5, rng);
    Rng train_rng(1);
    pretrain(model, data, PretrainConfig{}, train_rng);
    Tensor text = class_text_features(model.text);
    auto acc = [&](std::size_t domain) {
        std::vector<std::size_t> idx, labels;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.domains[i] == domain) {
                idx.push_back(i);
                labels.push_back(data.labels[i]);
            }
        return accuracy(predict(similarity(image_features(model.vision, data.gather(idx)), text)), labels);
    };
    const double source = acc(0), target = acc(1);
    EXPECT_GE(source - target, 0.10) << "source " << source << " target " << target;
}
