#pragma once

#include <functional>
#include <vector>

#include "signformer/tensor.hpp"

namespace signformer {

struct GradCheckReport {
  std::vector<double> max_rel_err;  // one entry per checked input
  double worst = 0.0;
  bool pass = false;
};

// Central finite-difference check of reverse-mode gradients. f must be
// deterministic. The (possibly non-scalar) output of f is reduced to a
// scalar with fixed random weights accumulated at 64-bit; relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|) per element.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, float h = 1e-3f,
                           double tol = 1e-3, uint64_t weight_seed = 7);

}  // namespace signformer
