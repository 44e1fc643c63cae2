// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "bonnet/error.hpp"
#include "bonnet/model.hpp"

namespace bonnet {

std::vector<double> class_weights(const std::vector<double>& frequencies,
                                  WeightingPolicy policy) {
  for (std::size_t c = 0; c < frequencies.size(); ++c) {
    if (!(frequencies[c] >= 0.0) || !std::isfinite(frequencies[c])) {
      throw DomainError("class " + std::to_string(c) + " has invalid frequency " +
                        std::to_string(frequencies[c]));
    }
  }
  std::vector<double> w(frequencies.size(), 1.0);
  switch (policy) {
    case WeightingPolicy::none:
      break;
    case WeightingPolicy::inverse_frequency: {
      double sum = 0.0;
      for (std::size_t c = 0; c < w.size(); ++c) {
        w[c] = 1.0 / std::max(frequencies[c], 1e-6);
        sum += w[c];
      }
      const double mean = sum / static_cast<double>(w.size());
      for (auto& v : w) {
        v /= mean;
      }
      break;
    }
    case WeightingPolicy::log_inverse:
      for (std::size_t c = 0; c < w.size(); ++c) {
        w[c] = 1.0 / std::log(1.02 + frequencies[c]);
      }
      break;
  }
  return w;
}

OpSpec loss_op(const LossSpec& spec) {
  OpSpec op = OpSpec::of(OpKind::focal_loss);
  op.gamma = spec.focal_gamma;
  op.class_weights = spec.class_weights;
  return op;
}

double segmentation_loss(const Tensor& logits, const Tensor& labels, const LossSpec& spec) {
  return focal_loss(logits, labels, spec.focal_gamma, spec.class_weights).flat(0);
}

ConfusionMatrix::ConfusionMatrix(int classes, std::optional<int> ignore_class)
    : classes_(classes),
      ignore_(ignore_class),
      counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0) {
  if (classes < 0) {
    throw InvalidArgument("class count must be >= 0");
  }
}

template <class P>
void ConfusionMatrix::accumulate(std::span<const P> predicted,
                                 std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion update: " + std::to_string(predicted.size()) +
                     " predictions for " + std::to_string(truth.size()) + " labels");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = static_cast<int>(predicted[i]);
    if (ignore_ && t == *ignore_) {
      continue;
    }
    if (t >= classes_ || p < 0 || p >= classes_) {
      throw DomainError("confusion update: class id outside [0, " + std::to_string(classes_) +
                        ")");
    }
    ++counts_[static_cast<std::size_t>(t * classes_ + p)];
  }
}

void ConfusionMatrix::update(std::span<const std::int32_t> predicted,
                             std::span<const std::uint8_t> truth) {
  accumulate(predicted, truth);
}

void ConfusionMatrix::update(std::span<const std::uint8_t> predicted,
                             std::span<const std::uint8_t> truth) {
  accumulate(predicted, truth);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw ShapeError("cannot merge confusion matrices of different sizes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    counts_[i] += other.counts_[i];
  }
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto v : counts_) {
    t += v;
  }
  return t;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const int C = cm.classes();
  Metrics m;
  m.iou.resize(static_cast<std::size_t>(C));
  m.accuracy.resize(static_cast<std::size_t>(C));
  double iou_sum = 0.0, acc_sum = 0.0;
  int iou_n = 0, acc_n = 0;
  for (int j = 0; j < C; ++j) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < C; ++k) {
      row += cm.at(j, k);
      col += cm.at(k, j);
    }
    const std::uint64_t tp = cm.at(j, j);
    if (const std::uint64_t denom = row + col - tp; denom > 0) {
      const double v = static_cast<double>(tp) / static_cast<double>(denom);
      m.iou[static_cast<std::size_t>(j)] = v;
      iou_sum += v;
      ++iou_n;
    }
    if (row > 0) {
      const double v = static_cast<double>(tp) / static_cast<double>(row);
      m.accuracy[static_cast<std::size_t>(j)] = v;
      acc_sum += v;
      ++acc_n;
    }
  }
  if (iou_n > 0) {
    m.miou = iou_sum / iou_n;
  }
  if (acc_n > 0) {
    m.macc = acc_sum / acc_n;
  }
  return m;
}

}  // namespace bonnet
