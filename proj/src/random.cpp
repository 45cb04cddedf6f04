#include "vtt/random.hpp"

#include <cmath>
#include <numeric>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::uint64_t Rng::mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() { return mix(key_ ^ mix(counter_++)); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

Scalar Rng::normal(Scalar mean, Scalar stddev) {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return static_cast<Scalar>(mean + stddev * z);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ParameterError("Rng::below(0)");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % n);
}

Rng Rng::split(std::uint64_t tag) const { return Rng(mix(key_ ^ mix(tag ^ 0xD1B54A32D192ED03ULL)), 0, 0); }

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
    return p;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw ParameterError("cannot sample " + std::to_string(k) + " of " + std::to_string(n));
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(p[i], p[i + below(n - i)]);
    p.resize(k);
    return p;
}

Tensor Rng::normal_tensor(Shape shape, Scalar stddev) {
    std::vector<Scalar> data(shape_numel(shape));
    for (auto& x : data) x = normal(0.0f, stddev);
    return Tensor(std::move(shape), std::move(data));
}

Tensor Rng::uniform_tensor(Shape shape, Scalar lo, Scalar hi) {
    std::vector<Scalar> data(shape_numel(shape));
    for (auto& x : data) x = static_cast<Scalar>(lo + (hi - lo) * uniform());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace vtt::inline VTT_PRECISION_NS
