#pragma once

// Adam with L2 weight decay folded into the gradient.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/models.hpp"

namespace rcagan {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Moments are indexed like the trainable entries of the ModelParams they were built for.
template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<T>> m, v;

  AdamState() = default;
  AdamState(const ModelParams<T>& params, AdamOptions opt) : options(opt) {
    for (const auto& e : params.entries()) {
      if (!e.trainable) continue;
      names.push_back(e.name);
      m.emplace_back(e.tensor.size(), T(0));
      v.emplace_back(e.tensor.size(), T(0));
    }
  }
};

// One bias-corrected Adam update of every trainable tensor, then clears grads.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state) {
  const auto& o = state.options;
  std::size_t slot = 0;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (slot >= state.names.size() || state.names[slot] != e.name) {
      throw ConfigError("adam_step: optimizer state does not match parameter '" + e.name + "'");
    }
    if (!e.tensor.has_grad()) throw std::logic_error("adam_step: parameter '" + e.name + "' has no gradient");
    ++slot;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  slot = 0;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    auto p = e.tensor.data();
    const auto g = e.tensor.grad();
    auto& m = state.m[slot];
    auto& v = state.v[slot];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + o.weight_decay * static_cast<double>(p[i]);
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps));
    }
    e.tensor.zero_grad();
    ++slot;
  }
}

}  // namespace rcagan
