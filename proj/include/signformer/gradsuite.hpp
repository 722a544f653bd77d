#pragma once

#include <string>
#include <vector>

#include "signformer/gradcheck.hpp"

namespace signformer {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  bool pass = true;
  double worst = 0.0;
};

// Finite-difference check of every op and composite layer on small D=16
// shapes (h=1e-3, tol=1e-3). Initial parameters are jittered away from the
// relu6 kinks, where the subgradient convention makes the comparison
// undefined.
GradSuiteResult run_gradcheck_suite();

}  // namespace signformer
