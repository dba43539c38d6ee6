#pragma once

// Central finite-difference gradient checking.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "rdcl/nn.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

// f must rebuild its graph from the leaf values on every call and return a
// scalar. Returns max over checked coordinates of
//   |analytic - central_difference| / max(1, |analytic|).
//
// coords_per_leaf == 0 checks every coordinate; otherwise a deterministic
// stride-spread subset of that size per leaf.
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves, double eps,
                         std::size_t coords_per_leaf = 0) {
  if (eps < 1e-7 || eps > 1e-3)
    throw TensorError("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto leaf : leaves) leaf.zero_grad();
  Tensor out = f();
  if (!out.all_finite()) throw TensorError("grad_check: non-finite output");
  out.backward();

  double max_rel = 0.0;
  for (auto leaf : leaves) {
    const std::vector<double> analytic =
        leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0);
    const std::size_t n = leaf.numel();
    std::size_t count = (coords_per_leaf == 0 || coords_per_leaf >= n)
                            ? n
                            : coords_per_leaf;
    for (std::size_t ci = 0; ci < count; ++ci) {
      const std::size_t i = (count == n) ? ci : (ci * n) / count;
      const double orig = leaf.data()[i];
      leaf.data_mut()[i] = orig + eps;
      const double fp = f().item();
      leaf.data_mut()[i] = orig - eps;
      const double fm = f().item();
      leaf.data_mut()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw TensorError("grad_check: non-finite perturbed output");
      const double fd = (fp - fm) / (2.0 * eps);
      const double rel =
          std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace rdcl
