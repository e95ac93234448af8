#pragma once

#include <vector>

#include "routelab/harness/checks.hpp"

namespace routelab::harness {

// Property suite that needs no training data: finite-difference gradients of
// every op and gate composition, softmax normalisation, beta bounds after
// optimisation, precision positivity and isolation, the h_t closed form,
// coverage monotonicity, generator determinism and the argmax tie rule.
std::vector<CheckResult> selftest();

} // namespace routelab::harness
