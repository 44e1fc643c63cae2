// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "bonnet/rng.hpp"
#include "bonnet/tape.hpp"
#include "bonnet/tensor.hpp"

namespace bonnet::test {

inline Tensor random_tensor(Dims dims, std::uint64_t seed, DType dtype = DType::f64,
                            double lo = -1.0, double hi = 1.0,
                            Layout layout = Layout::nchw) {
  Tensor t(dims, dtype, layout);
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  visit_float(dtype, [&](auto tag) {
    for (auto& v : t.data<decltype(tag)>()) {
      v = static_cast<decltype(tag)>(dist(gen));
    }
  });
  return t;
}

inline Tensor filled(Dims dims, double value, DType dtype = DType::f64) {
  Tensor t(dims, dtype);
  visit_float(dtype, [&](auto tag) {
    for (auto& v : t.data<decltype(tag)>()) {
      v = static_cast<decltype(tag)>(value);
    }
  });
  return t;
}

inline std::vector<double> values_of(const Tensor& t) {
  std::vector<double> v(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = t.flat(i);
  }
  return v;
}

/// Elementwise |a - n| / max(|a|, |n|, floor), maximised.
inline double max_rel_error(const Tensor& analytic, const Tensor& numeric,
                            double floor = 1e-3) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.flat(static_cast<std::size_t>(i));
    const double n = numeric.flat(static_cast<std::size_t>(i));
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

using LossBuilder = std::function<ValueId(Tape&, const std::map<std::string, ValueId>&)>;

/// Evaluates the loss built over `params` on a fresh tape.
inline double eval_loss(const TensorMap& params, const LossBuilder& build,
                        const ExecContext& ctx) {
  Tape tape(ctx);
  std::map<std::string, ValueId> ids;
  for (const auto& [name, p] : params) {
    ids[name] = tape.parameter(name, p);
  }
  return tape.value(build(tape, ids)).flat(0);
}

/// Central-difference gradient of the loss with respect to every parameter.
inline TensorMap numeric_gradient(const TensorMap& params, const LossBuilder& build,
                                  const ExecContext& ctx, double step = 1e-5) {
  TensorMap out;
  TensorMap work = params;
  for (const auto& [name, p] : params) {
    Tensor g(p.dims(), DType::f64, p.layout());
    auto gd = g.data<double>();
    auto pd = work.at(name).data<double>();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double orig = pd[i];
      pd[i] = orig + step;
      const double up = eval_loss(work, build, ctx);
      pd[i] = orig - step;
      const double down = eval_loss(work, build, ctx);
      pd[i] = orig;
      gd[i] = (up - down) / (2.0 * step);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

inline TensorMap analytic_gradient(const TensorMap& params, const LossBuilder& build,
                                   const ExecContext& ctx) {
  Tape tape(ctx);
  std::map<std::string, ValueId> ids;
  for (const auto& [name, p] : params) {
    ids[name] = tape.parameter(name, p);
  }
  return backward(tape, build(tape, ids));
}

/// Worst relative error over all parameters between the tape gradient and
/// central differences.
inline double gradcheck(const TensorMap& params, const LossBuilder& build,
                        ExecContext ctx = {Mode::train, 0, 1}) {
  const TensorMap a = analytic_gradient(params, build, ctx);
  const TensorMap n = numeric_gradient(params, build, ctx);
  double worst = 0.0;
  for (const auto& [name, g] : a) {
    worst = std::max(worst, max_rel_error(g, n.at(name)));
  }
  return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("bonnet-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace bonnet::test
