#pragma once

// Scalar type of this build. The default is float. Defining FIRENET_DOUBLE
// builds the same code in double inside a different inline namespace, so a
// program can link both; gradient tests use the double build as a
// finite-difference oracle for the float one.

#ifdef FIRENET_DOUBLE
#define FIRENET_ABI f64
#else
#define FIRENET_ABI f32
#endif

namespace firenet::inline FIRENET_ABI {

#ifdef FIRENET_DOUBLE
using real = double;
#else
using real = float;
#endif

}  // namespace firenet
