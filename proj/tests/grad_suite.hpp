#pragma once

// Finite-difference cases run against the double-precision build. The
// interface only uses std types so f32 translation units can drive it.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace vtt_grad {

struct GradCase {
    std::string name;
    // Max relative error between analytic and central-difference gradients
    // for the random instance drawn from `seed`.
    std::function<double(std::uint64_t seed)> run;
    bool chain = false;  // a full forward path rather than a single op
};

std::vector<GradCase> gradient_cases();

}  // namespace vtt_grad
