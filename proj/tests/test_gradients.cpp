#include <gtest/gtest.h>

#include <cctype>
#include <string>

#include "grad_suite.hpp"

namespace {

class Gradients : public ::testing::TestWithParam<vtt_grad::GradCase> {};

TEST_P(Gradients, MatchCentralDifferences) {
    const auto& c = GetParam();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const double err = c.run(seed * 7919);
        EXPECT_LT(err, 1e-3) << c.name << " seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, Gradients, ::testing::ValuesIn(vtt_grad::gradient_cases()),
                         [](const ::testing::TestParamInfo<vtt_grad::GradCase>& info) {
                             std::string name = info.param.name;
                             for (char& ch : name)
                                 if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                             return name;
                         });

}  // namespace
