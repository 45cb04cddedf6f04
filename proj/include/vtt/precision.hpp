#pragma once

// The library is compiled twice from the same sources: the production build
// stores f32, the VTT_DOUBLE_PRECISION build stores f64 and is used by the
// finite-difference gradient suites. Each build lives in its own inline
// namespace so both can be linked into one test binary.
#ifdef VTT_DOUBLE_PRECISION
#define VTT_PRECISION_NS f64
#else
#define VTT_PRECISION_NS f32
#endif

namespace vtt::inline VTT_PRECISION_NS {

#ifdef VTT_DOUBLE_PRECISION
using Scalar = double;
#else
using Scalar = float;
#endif

}  // namespace vtt::inline VTT_PRECISION_NS
