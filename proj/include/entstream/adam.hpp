#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

/// Adam optimizer state: first/second moment buffers per parameter tensor.
template <class S = float>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<S>> m, v;

  explicit AdamState(double learning_rate = 1e-4) : lr(learning_rate) {}
};

/// One Adam update with bias correction; params are modified in place and the
/// step counter advances. Moment buffers are allocated on first use.
template <class S>
void adam_step(std::vector<TensorT<S>>& params, AdamState<S>& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].data().size(), S(0));
      state.v[i].assign(params[i].data().size(), S(0));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: state holds " +
                     std::to_string(state.m.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data();
    const auto& g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size() || g.size() != p.size())
      throw ShapeError("adam_step: buffer size mismatch on parameter " +
                       std::to_string(i));
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      p[j] -= static_cast<S>(state.lr * (mj / bc1) /
                             (std::sqrt(vj / bc2) + state.eps));
    }
  }
}

}  // namespace entstream
