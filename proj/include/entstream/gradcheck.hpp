#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

/// Compares tape gradients against central finite differences.
///
/// `f` must rebuild the forward pass from the current leaf values and return
/// a scalar. Returns the max over all entries of the checked leaves of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Run with
/// S = double: 32-bit arithmetic cannot resolve an O(step^2) difference
/// quotient to useful precision.
template <class S>
double grad_check(const std::function<TensorT<S>()>& f,
                  const std::vector<TensorT<S>>& inputs,
                  double step = 1e-3) {
  for (const auto& t : inputs) t.zero_grad();
  TensorT<S> out = f();
  if (out.size() != 1)
    throw ContractError("grad_check: function must return a scalar, got " +
                        detail::shape_str(out.shape()));
  out.backward();
  std::vector<std::vector<S>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t.grad());

  double max_err = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& data = inputs[i].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const S orig = data[j];
      data[j] = orig + static_cast<S>(step);
      const double fp = static_cast<double>(f().item());
      data[j] = orig - static_cast<S>(step);
      const double fm = static_cast<double>(f().item());
      data[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = static_cast<double>(analytic[i][j]);
      const double err =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace entstream
