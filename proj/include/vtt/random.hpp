#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vtt/tensor.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Counter-based generator: draw n of stream `key` is mix(key, n), so streams can
// be split by tag without consuming the parent. Distributions are implemented
// here instead of <random> because the standard ones are not reproducible
// across library implementations.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9E3779B97F4A7C15ULL)) {}

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    Scalar normal(Scalar mean = 0.0f, Scalar stddev = 1.0f);
    std::size_t below(std::size_t n);

    // Independent child stream; does not advance this generator.
    Rng split(std::uint64_t tag) const;

    std::vector<std::size_t> permutation(std::size_t n);
    // k distinct indices from [0, n) in random order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    Tensor normal_tensor(Shape shape, Scalar stddev);
    Tensor uniform_tensor(Shape shape, Scalar lo, Scalar hi);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix(std::uint64_t z);

   private:
    Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace vtt::inline VTT_PRECISION_NS
