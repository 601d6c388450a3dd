// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>

#include "patchflow/tensor.hpp"

namespace patchflow {

// Compares the reverse-mode gradient of a scalar-valued function against
// central finite differences, coordinate by coordinate, and returns the
// largest relative error
//
//   |g_i - fd_i| / max(|g_i|, |fd_i|, floor)
//
// Coordinates where both sides are exactly zero contribute zero. The floor
// keeps coordinates whose true gradient is far below the function's scale
// from turning finite-difference roundoff into spurious relative error.
//
// `f` receives the tensor to differentiate with respect to and must return a
// scalar; anything else is a contract error. Run in double precision.
template <typename S>
S grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x,
             S eps = static_cast<S>(1e-5), S floor = static_cast<S>(1e-5)) {
  Tensor<S> probe = x.clone_detached();
  probe.set_requires_grad(true);
  Tensor<S> out = f(probe);
  require(out.size() == 1, ErrorKind::Contract,
          "grad_check: function output must be scalar, got " + shape_str(out.shape()));

  std::vector<S> analytic(static_cast<std::size_t>(x.size()), S(0));
  if (out.requires_grad()) {
    out.backward();
    if (probe.has_grad()) {
      auto g = probe.grad();
      analytic.assign(g.begin(), g.end());
    }
  }

  Tensor<S> fd_point = x.clone_detached();
  auto data = fd_point.mutable_data();
  S worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    S saved = data[i];
    data[i] = saved + eps;
    S f_plus = f(fd_point).item();
    data[i] = saved - eps;
    S f_minus = f(fd_point).item();
    data[i] = saved;
    S fd = (f_plus - f_minus) / (S(2) * eps);
    S g = analytic[i];
    S denom = std::max(std::abs(g), std::abs(fd));
    if (denom == S(0)) continue;
    S rel = std::abs(g - fd) / std::max(denom, floor);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace patchflow
