#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm::ad {

struct GradCheckResult {
  /// max |autodiff - central difference| / max(1, |central difference|)
  /// over the components that were checked.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Components skipped because f was non-finite nearby.
  std::vector<std::size_t> non_finite;
  /// Components skipped because central differences at h and 10h disagree
  /// (a kink, e.g. a ReLU switching, lies within 10h).
  std::vector<std::size_t> kinks;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must build its result from the tensor it is given.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace dgm::ad
