#pragma once

// Helpers shared by the unit suites. Included from both f32 and f64 sources,
// so everything lives in the precision namespace.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "vtt/autodiff.hpp"
#include "vtt/random.hpp"

namespace vtt::inline VTT_PRECISION_NS {
namespace testing {

// sum(y * w) for a fixed random w: reduces any output to a scalar whose
// gradient touches every element.
inline ad::Var probe(ad::Var y, std::uint64_t seed) {
    Rng rng(seed);
    ad::Var w = y.tape().constant(rng.normal_tensor(y.shape(), 1));
    return ad::sum(ad::mul(y, w));
}

inline void expect_tensor_near(const Tensor& a, const Tensor& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "element " << i;
}

inline double norm(const Tensor& t) { return norm2(t.data()); }

// Fresh directory under the system temp dir, removed by the destructor.
class TempDir {
   public:
    explicit TempDir(const std::string& tag) {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = tag;
        if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
        for (char& c : name)
            if (c == '/') c = '_';
        path_ = std::filesystem::temp_directory_path() / ("vtt_test_" + name);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

   private:
    std::filesystem::path path_;
};

}  // namespace testing
}  // namespace vtt::inline VTT_PRECISION_NS
