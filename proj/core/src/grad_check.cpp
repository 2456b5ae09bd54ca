#include "dgm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "dgm/autodiff.hpp"
#include "dgm/error.hpp"

namespace dgm::ad {

namespace {

std::optional<double> eval(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  try {
    const double v = f(x).item();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("grad_check: step must be positive");
  Tape tape;
  const Tensor leaf = tape.leaf(x.detached());
  const Tensor loss = f(leaf);
  const Tensor grad = tape.backward(loss).of(leaf);

  GradCheckResult result;
  const auto f0 = eval(f, x);
  Tensor probe = x.detached();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    auto at = [&](double offset) {
      probe[i] = orig + offset;
      auto v = eval(f, probe);
      probe[i] = orig;
      return v;
    };
    const auto fp = at(h), fm = at(-h), fpw = at(10 * h), fmw = at(-10 * h);
    if (!f0 || !fp || !fm || !fpw || !fmw) {
      result.non_finite.push_back(i);
      continue;
    }
    // Central differences at h and 10h agree to O(h^2) for smooth f; a
    // kink within 10h of x makes them differ by O(1).
    const double central = (*fp - *fm) / (2 * h);
    const double wide = (*fpw - *fmw) / (20 * h);
    if (std::abs(wide - central) > 1e-4 * std::max(1.0, std::abs(central))) {
      result.kinks.push_back(i);
      continue;
    }
    const double err = std::abs(grad[i] - central) / std::max(1.0, std::abs(central));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.checked;
  }
  return result;
}

}  // namespace dgm::ad
