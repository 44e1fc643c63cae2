// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "bonnet/trainer.hpp"

namespace bonnet {

namespace {

Tensor zeros_like(const Tensor& t) {
  Tensor z(t.dims(), t.dtype(), t.layout());
  visit_float(t.dtype(), [&](auto tag) {
    for (auto& v : z.data<decltype(tag)>()) {
      v = 0;
    }
  });
  return z;
}

}  // namespace

OptimizerState OptimizerState::create(const TrainConfig& config, const TensorMap& parameters) {
  OptimizerState s;
  s.kind = config.optimizer;
  s.learn_rate = config.learn_rate;
  s.momentums = config.momentums;
  for (const auto& [name, p] : parameters) {
    s.first.emplace(name, zeros_like(p));
    if (s.kind == OptimizerKind::adam_like) {
      s.second.emplace(name, zeros_like(p));
    }
  }
  return s;
}

void apply_update(TensorMap& parameters, const TensorMap& gradients, OptimizerState& state) {
  ++state.step;
  const double lr = state.learn_rate;
  const double b1 = state.momentums.at(0);
  const double b2 = state.kind == OptimizerKind::adam_like ? state.momentums.at(1) : 0.0;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, p] : parameters) {
    const auto g_it = gradients.find(name);
    if (g_it == gradients.end()) {
      throw ShapeError("no gradient for parameter '" + name + "'");
    }
    const Tensor& g = g_it->second;
    if (g.dims() != p.dims()) {
      throw ShapeError("gradient of '" + name + "' has dims " + to_string(g.dims()) +
                       ", parameter has " + to_string(p.dims()));
    }
    visit_float(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pd = p.data<T>();
      auto md = state.first.at(name).data<T>();
      if (state.kind == OptimizerKind::sgd_momentum) {
        for (std::size_t i = 0; i < pd.size(); ++i) {
          const double m = b1 * md[i] + g.flat(i);
          md[i] = static_cast<T>(m);
          pd[i] = static_cast<T>(pd[i] - lr * m);
        }
        return;
      }
      auto vd = state.second.at(name).data<T>();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const double gi = g.flat(i);
        const double m = b1 * md[i] + (1.0 - b1) * gi;
        const double v = b2 * vd[i] + (1.0 - b2) * gi * gi;
        md[i] = static_cast<T>(m);
        vd[i] = static_cast<T>(v);
        pd[i] = static_cast<T>(pd[i] - lr * (m / c1) / (std::sqrt(v / c2) + 1e-8));
      }
    });
  }
}

TensorMap average_gradients(std::span<const TensorMap> gradients,
                            std::span<const double> weights) {
  if (gradients.empty()) {
    throw InvalidArgument("average_gradients needs at least one gradient set");
  }
  if (!weights.empty() && weights.size() != gradients.size()) {
    throw InvalidArgument("average_gradients: weight count does not match set count");
  }
  TensorMap out;
  for (const auto& [name, first] : gradients[0]) {
    Tensor acc(first.dims(), first.dtype(), first.layout());
    std::vector<long double> sum(static_cast<std::size_t>(first.size()), 0.0);
    for (std::size_t k = 0; k < gradients.size(); ++k) {
      const auto it = gradients[k].find(name);
      if (it == gradients[k].end()) {
        throw ShapeError("gradient set " + std::to_string(k) + " lacks parameter '" + name + "'");
      }
      if (it->second.dims() != first.dims() || it->second.layout() != first.layout()) {
        throw ShapeError("gradient of '" + name + "' differs in shape between sets");
      }
      const double w = weights.empty() ? 1.0 : weights[k];
      for (std::size_t i = 0; i < sum.size(); ++i) {
        sum[i] += static_cast<long double>(w) * it->second.flat(i);
      }
    }
    if (weights.empty()) {
      for (auto& v : sum) {
        v /= static_cast<long double>(gradients.size());
      }
    }
    visit_float(first.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto d = acc.data<T>();
      for (std::size_t i = 0; i < sum.size(); ++i) {
        d[i] = static_cast<T>(sum[i]);
      }
    });
    out.emplace(name, std::move(acc));
  }
  for (std::size_t k = 1; k < gradients.size(); ++k) {
    if (gradients[k].size() != gradients[0].size()) {
      throw ShapeError("gradient set " + std::to_string(k) + " has extra parameters");
    }
  }
  return out;
}

}  // namespace bonnet
