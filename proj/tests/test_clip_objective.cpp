#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "vtt/errors.hpp"
#include "vtt/objective.hpp"

using namespace vtt;
using namespace vtt::testing;

namespace {

Tensor unit_rows(Rng& rng, std::size_t n, std::size_t d) {
    ad::Tape tape;
    return ad::l2_normalize(tape.constant(rng.normal_tensor({n, d}, 1))).value();
}

}  // namespace

TEST(Similarity, SelfAndOrthogonal) {
    Tensor f = Tensor::matrix({{1, 0, 0}, {0, 0.6f, 0.8f}});
    Tensor t = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0.6f, 0.8f}});
    Tensor s = similarity(f, t);
    EXPECT_FLOAT_EQ(s.at(0, 0), 1);
    EXPECT_FLOAT_EQ(s.at(0, 1), 0);
    EXPECT_FLOAT_EQ(s.at(1, 2), 1);
    EXPECT_FLOAT_EQ(s.at(1, 1), 0.6f);
}

TEST(Similarity, MatchesNaiveLoops) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(8), d = 1 + rng.below(8);
        Tensor f = unit_rows(rng, n, d), t = unit_rows(rng, k, d);
        Tensor s = similarity(f, t);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                double acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += f.at(i, c) * t.at(j, c);
                EXPECT_NEAR(s.at(i, j), acc, 1e-6);
                EXPECT_LE(std::fabs(s.at(i, j)), 1.0 + 1e-6);
            }
    }
}

TEST(Similarity, NonUnitRowsAreContractErrors) {
    Tensor f = Tensor::matrix({{1, 1}});
    Tensor t = Tensor::matrix({{1, 0}});
    EXPECT_THROW(similarity(f, t), ContractError);
    EXPECT_THROW(similarity(t, f), ContractError);
}

TEST(ClassProbabilities, EqualSimilaritiesAreUniform) {
    Tensor p = class_probabilities(Tensor::matrix({{0.3f, 0.3f, 0.3f, 0.3f}}), Scalar(0.01));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p[j], 0.25, 1e-7);
}

TEST(ClassProbabilities, SharpTemperatureClosedForm) {
    // 1 / (1 + exp(-10)) = 0.9999546021312976
    Tensor p = class_probabilities(Tensor::matrix({{1.0f, 0.9f}}), Scalar(0.01));
    EXPECT_NEAR(p[0], 0.9999546021312976, 1e-6);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);
}

TEST(ClassProbabilities, MatchesBruteForceUpToEightByEight) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(8), d = 2 + rng.below(6);
        const Scalar tau = static_cast<Scalar>(0.01 + 0.5 * rng.uniform());
        Tensor f = unit_rows(rng, n, d), t = unit_rows(rng, k, d);
        Tensor p = class_probabilities(similarity(f, t), tau);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> s(k);
            double mx = -1e300, z = 0, total = 0;
            for (std::size_t j = 0; j < k; ++j) {
                double acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(f.at(i, c)) * t.at(j, c);
                s[j] = acc / tau;
                mx = std::max(mx, s[j]);
            }
            for (auto v : s) z += std::exp(v - mx);
            for (std::size_t j = 0; j < k; ++j) {
                EXPECT_NEAR(p.at(i, j), std::exp(s[j] - mx) / z, 2e-5);
                total += p.at(i, j);
            }
            EXPECT_NEAR(total, 1.0, 1e-6);
        }
    }
}

TEST(CrossEntropy, UniformIsLogK) {
    for (std::size_t k : {2u, 5u, 7u}) {
        ad::Tape tape;
        auto s = tape.constant(Tensor::full({3, k}, 0.2f));
        double l = cross_entropy_loss(s, {0, k - 1, 1}, Scalar(0.01)).value().item();
        EXPECT_NEAR(l, std::log(static_cast<double>(k)), 1e-6);
    }
}

TEST(CrossEntropy, ConfidentCorrectApproachesZeroAndNeverNegative) {
    ad::Tape tape;
    auto s = tape.constant(Tensor::matrix({{1, -1, -1}, {-1, -1, 1}}));
    double l = cross_entropy_loss(s, {0, 2}, Scalar(0.01)).value().item();
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 1e-6);
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        ad::Tape t2;
        auto r = t2.constant(rng.uniform_tensor({4, 5}, -1, 1));
        EXPECT_GE(cross_entropy_loss(r, {0, 1, 2, 4}, Scalar(0.05)).value().item(), 0);
    }
}

TEST(CrossEntropy, LabelOutOfRangeIsParameterError) {
    ad::Tape tape;
    auto s = tape.constant(Tensor::full({2, 3}, 0));
    EXPECT_THROW(cross_entropy_loss(s, {0, 3}, Scalar(0.01)), ParameterError);
}

TEST(Predict, ArgmaxWithLowestIndexTieBreak) {
    Tensor s = Tensor::matrix({{0.1f, 0.9f, 0.2f, 0.3f}, {0.1f, 0.7f, 0.2f, 0.7f}, {0.5f, 0.5f, 0.5f, 0.5f}});
    EXPECT_EQ(predict(s), (std::vector<std::size_t>{1, 1, 0}));
}

TEST(Predict, InvariantToIncreasingTransformsAndTemperature) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s = rng.uniform_tensor({6, 5}, -1, 1);
        auto base = predict(s);
        std::vector<Scalar> cubed;
        for (auto v : s.data()) cubed.push_back(v * v * v + 3 * v);
        EXPECT_EQ(predict(Tensor(s.shape(), cubed)), base);
        EXPECT_EQ(predict(class_probabilities(s, Scalar(0.01))), base);
        EXPECT_EQ(predict(class_probabilities(s, Scalar(2))), base);
    }
}

TEST(Accuracy, FractionCorrect) {
    EXPECT_DOUBLE_EQ(accuracy({0, 1, 2, 3}, {0, 1, 0, 0}), 0.5);
    EXPECT_THROW(accuracy({0}, {0, 1}), DimensionError);
}
