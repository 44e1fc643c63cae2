// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "bonnet/ops.hpp"
#include "bonnet/rng.hpp"
#include "kernels.hpp"

namespace bonnet {

namespace {

// Visits every element as (flat index, channel) in buffer order.
template <class F>
void each_element(const Dims& d, Layout layout, F&& f) {
  std::int64_t i = 0;
  if (layout == Layout::nchw) {
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t p = 0; p < d.h * d.w; ++p) {
          f(i++, c);
        }
      }
    }
  } else {
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t p = 0; p < d.h * d.w; ++p) {
        for (std::int64_t c = 0; c < d.c; ++c) {
          f(i++, c);
        }
      }
    }
  }
}

void require_float(const Tensor& t, const char* what) {
  if (!t.is_float()) {
    throw ShapeError(std::string(what) + " requires a float tensor");
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dims() != b.dims() || a.layout() != b.layout() || a.dtype() != b.dtype()) {
    throw ShapeError(std::string(what) + ": operands differ, " + to_string(a.dims()) +
                     " vs " + to_string(b.dims()));
  }
}

void require_channels(const Tensor& p, std::int64_t c, const char* what) {
  if (p.size() != c) {
    throw ShapeError(std::string(what) + ": per-channel tensor has " +
                     std::to_string(p.size()) + " values for " + std::to_string(c) +
                     " channels");
  }
}

std::vector<double> as_doubles(const Tensor& t) {
  std::vector<double> v(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = t.flat(i);
  }
  return v;
}

bool dropout_kept(std::uint64_t seed, std::int64_t sample, std::int64_t c, std::int64_t h,
                  std::int64_t w, double keep) {
  return unit_from_bits(hash_seed(seed, sample, c, h, w)) < keep;
}

struct PoolGeom {
  std::int64_t ho = 0, wo = 0, pad_t = 0, pad_l = 0;
};

PoolGeom pool_geometry(const Dims& d, const OpSpec& spec) {
  spec.validate();
  if (d.h <= 0 || d.w <= 0) {
    throw ShapeError("max_pool2d: zero-extent input " + to_string(d));
  }
  PoolGeom g;
  g.ho = conv_output_extent(d.h, spec.kernel_h, spec.stride, 1, spec.padding);
  g.wo = conv_output_extent(d.w, spec.kernel_w, spec.stride, 1, spec.padding);
  if (spec.padding == Padding::same) {
    g.pad_t = std::max<std::int64_t>((g.ho - 1) * spec.stride + spec.kernel_h - d.h, 0) / 2;
    g.pad_l = std::max<std::int64_t>((g.wo - 1) * spec.stride + spec.kernel_w - d.w, 0) / 2;
  }
  return g;
}

// Index into x of the first maximum within the window of output (n, c, oy, ox),
// or -1 if the window contains only padding.
std::int64_t pool_argmax(const Tensor& x, const OpSpec& spec, const PoolGeom& g,
                         std::int64_t n, std::int64_t c, std::int64_t oy, std::int64_t ox) {
  const auto& d = x.dims();
  std::int64_t best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::int64_t ky = 0; ky < spec.kernel_h; ++ky) {
    const std::int64_t iy = oy * spec.stride - g.pad_t + ky;
    if (iy < 0 || iy >= d.h) {
      continue;
    }
    for (std::int64_t kx = 0; kx < spec.kernel_w; ++kx) {
      const std::int64_t ix = ox * spec.stride - g.pad_l + kx;
      if (ix < 0 || ix >= d.w) {
        continue;
      }
      const auto off = static_cast<std::int64_t>(x.offset(n, c, iy, ix));
      const double v = x.flat(static_cast<std::size_t>(off));
      if (best < 0 || v > best_v) {
        best = off;
        best_v = v;
      }
    }
  }
  return best;
}

template <class T>
void bilinear_taps(std::int64_t dst, std::int64_t in, std::int64_t out, std::int64_t& i0,
                   std::int64_t& i1, T& frac) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  i0 = static_cast<std::int64_t>(std::floor(src));
  i1 = std::min(i0 + 1, in - 1);
  frac = static_cast<T>(src - static_cast<double>(i0));
}

// Per-pixel log-softmax pieces for focal loss: returns ln p_y and fills p.
double log_softmax_at(const Tensor& logits, std::int64_t n, std::int64_t h, std::int64_t w,
                      std::int64_t y, std::vector<double>& p) {
  const std::int64_t C = logits.dims().c;
  double m = -std::numeric_limits<double>::infinity();
  for (std::int64_t c = 0; c < C; ++c) {
    m = std::max(m, logits.at(n, c, h, w));
  }
  double z = 0.0;
  for (std::int64_t c = 0; c < C; ++c) {
    p[static_cast<std::size_t>(c)] = std::exp(logits.at(n, c, h, w) - m);
    z += p[static_cast<std::size_t>(c)];
  }
  for (auto& v : p) {
    v /= z;
  }
  return logits.at(n, y, h, w) - m - std::log(z);
}

std::int64_t checked_label(const Tensor& labels, std::int64_t n, std::int64_t h,
                           std::int64_t w, std::int64_t C) {
  const double v = labels.at(n, 0, h, w);
  const auto y = static_cast<std::int64_t>(v);
  if (v < 0 || y >= C || static_cast<double>(y) != v) {
    throw DomainError("focal_loss: label " + std::to_string(v) + " outside [0, " +
                      std::to_string(C) + ")");
  }
  return y;
}

void check_loss_inputs(const Tensor& logits, const Tensor& labels,
                       std::span<const double> weights) {
  require_float(logits, "focal_loss");
  const auto& d = logits.dims();
  const auto& l = labels.dims();
  if (d.c == 0) {
    throw ShapeError("focal_loss: zero classes");
  }
  if (l.n != d.n || l.c != 1 || l.h != d.h || l.w != d.w) {
    throw ShapeError("focal_loss: labels " + to_string(l) + " do not match logits " +
                     to_string(d));
  }
  if (!weights.empty() && static_cast<std::int64_t>(weights.size()) != d.c) {
    throw ShapeError("focal_loss: " + std::to_string(weights.size()) +
                     " class weights for " + std::to_string(d.c) + " classes");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// batch norm / scale-shift

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, Mode mode,
                  double eps, BatchStats* stats) {
  require_float(x, "batch_norm");
  const auto& d = x.dims();
  for (const Tensor* p : {&gamma, &beta, &running_mean, &running_var}) {
    require_channels(*p, d.c, "batch_norm");
  }
  if (!(eps >= 0.0)) {
    throw InvalidArgument("batch_norm: epsilon must be >= 0");
  }
  const auto C = static_cast<std::size_t>(d.c);
  const std::int64_t M = d.n * d.h * d.w;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == Mode::train) {
    if (M == 0) {
      throw ShapeError("batch_norm: empty batch in train mode");
    }
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      mean[static_cast<std::size_t>(c)] += x.flat(static_cast<std::size_t>(i));
    });
    for (auto& m : mean) {
      m /= static_cast<double>(M);
    }
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      const double dv = x.flat(static_cast<std::size_t>(i)) - mean[static_cast<std::size_t>(c)];
      var[static_cast<std::size_t>(c)] += dv * dv;
    });
    for (auto& v : var) {
      v /= static_cast<double>(M);
    }
    if (stats != nullptr) {
      *stats = BatchStats{mean, var, M};
    }
  } else {
    mean = as_doubles(running_mean);
    var = as_doubles(running_var);
  }
  const auto g = as_doubles(gamma);
  const auto b = as_doubles(beta);
  std::vector<double> inv(C);
  for (std::size_t c = 0; c < C; ++c) {
    inv[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  Tensor out(d, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      const auto cc = static_cast<std::size_t>(c);
      const auto ii = static_cast<std::size_t>(i);
      ys[ii] = static_cast<T>(g[cc] * ((xs[ii] - mean[cc]) * inv[cc]) + b[cc]);
    });
  });
  return out;
}

void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchStats& stats,
                          double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw InvalidArgument("batch_norm decay must lie in [0, 1), got " + std::to_string(decay));
  }
  require_channels(running_mean, static_cast<std::int64_t>(stats.mean.size()), "batch_norm");
  require_channels(running_var, static_cast<std::int64_t>(stats.var.size()), "batch_norm");
  visit_float(running_mean.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto m = running_mean.data<T>();
    auto v = running_var.data<T>();
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
      m[c] = static_cast<T>(decay * m[c] + (1.0 - decay) * stats.mean[c]);
      v[c] = static_cast<T>(decay * v[c] + (1.0 - decay) * stats.var[c]);
    }
  });
}

BatchStats merge_batch_stats(std::span<const BatchStats> parts) {
  BatchStats out;
  if (parts.empty()) {
    return out;
  }
  const std::size_t C = parts.front().mean.size();
  out.mean.assign(C, 0.0);
  out.var.assign(C, 0.0);
  for (const auto& p : parts) {
    if (p.mean.size() != C) {
      throw ShapeError("merge_batch_stats: channel count mismatch");
    }
    out.count += p.count;
  }
  if (out.count == 0) {
    return out;
  }
  // Pooled moments: E[x] and E[x^2] weighted by element counts.
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0, sq = 0.0;
    for (const auto& p : parts) {
      const double wgt = static_cast<double>(p.count) / static_cast<double>(out.count);
      m += wgt * p.mean[c];
      sq += wgt * (p.var[c] + p.mean[c] * p.mean[c]);
    }
    out.mean[c] = m;
    out.var[c] = std::max(0.0, sq - m * m);
  }
  return out;
}

Tensor scale_shift(const Tensor& x, const Tensor& scale, const Tensor& shift,
                   bool fused_relu) {
  require_float(x, "scale_shift");
  require_channels(scale, x.dims().c, "scale_shift");
  require_channels(shift, x.dims().c, "scale_shift");
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    auto sc = scale.data<T>();
    auto sh = shift.data<T>();
    each_element(x.dims(), x.layout(), [&](std::int64_t i, std::int64_t c) {
      const auto ii = static_cast<std::size_t>(i);
      const auto cc = static_cast<std::size_t>(c);
      const double v = static_cast<double>(xs[ii]) * sc[cc] + sh[cc];
      ys[ii] = fused_relu && v < 0.0 ? T(0) : static_cast<T>(v);
    });
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor relu(const Tensor& x) {
  require_float(x, "relu");
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ys[i] = xs[i] > T(0) ? xs[i] : T(0);
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double keep_prob, std::uint64_t seed,
               std::int64_t sample_offset, Mode mode) {
  require_float(x, "dropout");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw InvalidArgument("dropout: keep probability must lie in (0, 1]");
  }
  if (mode == Mode::infer || keep_prob == 1.0) {
    return x;
  }
  const auto& d = x.dims();
  Tensor out(d, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    const T inv = static_cast<T>(1.0 / keep_prob);
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t h = 0; h < d.h; ++h) {
          for (std::int64_t w = 0; w < d.w; ++w) {
            const auto i = x.offset(n, c, h, w);
            ys[i] = dropout_kept(seed, sample_offset + n, c, h, w, keep_prob) ? xs[i] * inv
                                                                             : T(0);
          }
        }
      }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, bool fused_relu) {
  require_float(a, "add");
  require_same(a, b, "add");
  Tensor out(a.dims(), a.dtype(), a.layout());
  visit_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = out.data<T>();
    for (std::size_t i = 0; i < as.size(); ++i) {
      const T v = as[i] + bs[i];
      ys[i] = fused_relu && v < T(0) ? T(0) : v;
    }
  });
  return out;
}

Tensor square(const Tensor& x) {
  require_float(x, "square");
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ys[i] = xs[i] * xs[i];
    }
  });
  return out;
}

Tensor reduce_sum(const Tensor& x) {
  require_float(x, "reduce_sum");
  Tensor out({1, 1, 1, 1}, x.dtype());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T s = T(0);
    for (const T v : x.data<T>()) {
      s += v;
    }
    out.data<T>()[0] = s;
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_float(a, "concat");
  const auto& da = a.dims();
  const auto& db = b.dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w || a.layout() != b.layout() ||
      a.dtype() != b.dtype()) {
    throw ShapeError("concat: incompatible operands " + to_string(da) + " and " +
                     to_string(db));
  }
  Tensor out({da.n, da.c + db.c, da.h, da.w}, a.dtype(), a.layout());
  visit_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = out.data<T>();
    const std::int64_t hw = da.h * da.w;
    if (a.layout() == Layout::nchw) {
      auto dst = ys.begin();
      for (std::int64_t n = 0; n < da.n; ++n) {
        dst = std::copy_n(as.begin() + n * da.c * hw, da.c * hw, dst);
        dst = std::copy_n(bs.begin() + n * db.c * hw, db.c * hw, dst);
      }
    } else {
      auto dst = ys.begin();
      for (std::int64_t p = 0; p < da.n * hw; ++p) {
        dst = std::copy_n(as.begin() + p * da.c, da.c, dst);
        dst = std::copy_n(bs.begin() + p * db.c, db.c, dst);
      }
    }
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, const OpSpec& spec) {
  require_float(x, "max_pool2d");
  const auto& d = x.dims();
  const PoolGeom g = pool_geometry(d, spec);
  Tensor out({d.n, d.c, g.ho, g.wo}, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t src = pool_argmax(x, spec, g, n, c, oy, ox);
            ys[out.offset(n, c, oy, ox)] =
                src < 0 ? T(0) : xs[static_cast<std::size_t>(src)];
          }
        }
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& logits) {
  require_float(logits, "softmax");
  const auto& d = logits.dims();
  if (d.c == 0) {
    throw ShapeError("softmax: zero classes");
  }
  Tensor out(d, logits.dtype(), logits.layout());
  std::vector<double> e(static_cast<std::size_t>(d.c));
  visit_float(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ys = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::int64_t c = 0; c < d.c; ++c) {
            m = std::max(m, logits.at(n, c, h, w));
          }
          double z = 0.0;
          for (std::int64_t c = 0; c < d.c; ++c) {
            e[static_cast<std::size_t>(c)] = std::exp(logits.at(n, c, h, w) - m);
            z += e[static_cast<std::size_t>(c)];
          }
          for (std::int64_t c = 0; c < d.c; ++c) {
            ys[out.offset(n, c, h, w)] = static_cast<T>(e[static_cast<std::size_t>(c)] / z);
          }
        }
      }
    }
  });
  return out;
}

Tensor argmax(const Tensor& logits) {
  const auto& d = logits.dims();
  if (d.c == 0) {
    throw ShapeError("argmax: zero classes");
  }
  const DType dtype = logits.is_float() ? logits.dtype() : DType::f32;
  Tensor out({d.n, 1, d.h, d.w}, dtype, logits.layout());
  visit_float(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto ys = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          std::int64_t best = 0;
          double best_v = logits.at(n, 0, h, w);
          for (std::int64_t c = 1; c < d.c; ++c) {
            const double v = logits.at(n, c, h, w);
            if (v > best_v) {
              best = c;
              best_v = v;
            }
          }
          ys[out.offset(n, 0, h, w)] = static_cast<T>(best);
        }
      }
    }
  });
  return out;
}

SoftmaxArgmax softmax_argmax(const Tensor& logits) {
  SoftmaxArgmax r;
  r.probabilities = softmax(logits);
  const Tensor ids = argmax(logits);
  const auto& d = logits.dims();
  r.labels.resize(static_cast<std::size_t>(d.n * d.h * d.w));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t h = 0; h < d.h; ++h) {
      for (std::int64_t w = 0; w < d.w; ++w) {
        r.labels[i++] = static_cast<std::int32_t>(ids.at(n, 0, h, w));
      }
    }
  }
  return r;
}

Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_float(x, "resize_bilinear");
  const auto& d = x.dims();
  if (out_h < 1 || out_w < 1 || d.h < 1 || d.w < 1) {
    throw ShapeError("resize_bilinear: zero-extent resize");
  }
  Tensor out({d.n, d.c, out_h, out_w}, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      std::int64_t y0, y1;
      T fy;
      bilinear_taps(oy, d.h, out_h, y0, y1, fy);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        std::int64_t x0, x1;
        T fx;
        bilinear_taps(ox, d.w, out_w, x0, x1, fx);
        for (std::int64_t n = 0; n < d.n; ++n) {
          for (std::int64_t c = 0; c < d.c; ++c) {
            const T top = xs[x.offset(n, c, y0, x0)] * (T(1) - fx) + xs[x.offset(n, c, y0, x1)] * fx;
            const T bot = xs[x.offset(n, c, y1, x0)] * (T(1) - fx) + xs[x.offset(n, c, y1, x1)] * fx;
            ys[out.offset(n, c, oy, ox)] = top * (T(1) - fy) + bot * fy;
          }
        }
      }
    }
  });
  return out;
}

Tensor focal_loss(const Tensor& logits, const Tensor& labels, double gamma,
                  std::span<const double> class_weights) {
  check_loss_inputs(logits, labels, class_weights);
  if (!(gamma >= 0.0)) {
    throw InvalidArgument("focal_loss: gamma must be >= 0");
  }
  const auto& d = logits.dims();
  std::vector<double> p(static_cast<std::size_t>(d.c));
  double total = 0.0;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t h = 0; h < d.h; ++h) {
      for (std::int64_t w = 0; w < d.w; ++w) {
        const std::int64_t y = checked_label(labels, n, h, w, d.c);
        const double log_p = log_softmax_at(logits, n, h, w, y, p);
        const double py = p[static_cast<std::size_t>(y)];
        const double wy = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
        const double mod = gamma == 0.0 ? 1.0 : std::pow(std::max(0.0, 1.0 - py), gamma);
        total += wy * mod * (-log_p);
      }
    }
  }
  const double pixels = static_cast<double>(d.n * d.h * d.w);
  Tensor out({1, 1, 1, 1}, logits.dtype());
  visit_float(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    out.data<T>()[0] = static_cast<T>(pixels > 0 ? total / pixels : 0.0);
  });
  return out;
}

// ---------------------------------------------------------------------------
// backward kernels

namespace detail {

NormGrads batch_norm_backward(const Tensor& x, const Tensor& gamma,
                              const Tensor& running_mean, const Tensor& running_var,
                              const Tensor& grad_out, Mode mode, double eps) {
  const auto& d = x.dims();
  const auto C = static_cast<std::size_t>(d.c);
  const std::int64_t M = d.n * d.h * d.w;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == Mode::train) {
    BatchStats s;
    // Recompute the batch statistics exactly as the forward did.
    (void)batch_norm(x, gamma, gamma, running_mean, running_var, Mode::train, eps, &s);
    mean = s.mean;
    var = s.var;
  } else {
    mean = as_doubles(running_mean);
    var = as_doubles(running_var);
  }
  const auto g = as_doubles(gamma);
  std::vector<double> inv(C);
  for (std::size_t c = 0; c < C; ++c) {
    inv[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  NormGrads out;
  out.input = Tensor(d, x.dtype(), x.layout());
  out.gamma = Tensor({1, d.c, 1, 1}, x.dtype());
  out.beta = Tensor({1, d.c, 1, 1}, x.dtype());
  std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto gs = grad_out.data<T>();
    auto dx = out.input.data<T>();
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      const auto ii = static_cast<std::size_t>(i);
      const auto cc = static_cast<std::size_t>(c);
      const double xhat = (xs[ii] - mean[cc]) * inv[cc];
      sum_g[cc] += gs[ii];
      sum_gx[cc] += gs[ii] * xhat;
    });
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      const auto ii = static_cast<std::size_t>(i);
      const auto cc = static_cast<std::size_t>(c);
      if (mode == Mode::train) {
        const double xhat = (xs[ii] - mean[cc]) * inv[cc];
        dx[ii] = static_cast<T>(g[cc] * inv[cc] / static_cast<double>(M) *
                                (static_cast<double>(M) * gs[ii] - sum_g[cc] - xhat * sum_gx[cc]));
      } else {
        dx[ii] = static_cast<T>(gs[ii] * g[cc] * inv[cc]);
      }
    });
    auto dg = out.gamma.data<T>();
    auto db = out.beta.data<T>();
    for (std::size_t c = 0; c < C; ++c) {
      dg[c] = static_cast<T>(sum_gx[c]);
      db[c] = static_cast<T>(sum_g[c]);
    }
  });
  return out;
}

NormGrads scale_shift_backward(const Tensor& x, const Tensor& scale, const Tensor& shift,
                               const Tensor& grad_out, bool fused_relu) {
  const auto& d = x.dims();
  NormGrads out;
  out.input = Tensor(d, x.dtype(), x.layout());
  out.gamma = Tensor({1, d.c, 1, 1}, x.dtype());
  out.beta = Tensor({1, d.c, 1, 1}, x.dtype());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto gs = grad_out.data<T>();
    auto sc = scale.data<T>();
    auto sh = shift.data<T>();
    auto dx = out.input.data<T>();
    auto ds = out.gamma.data<T>();
    auto db = out.beta.data<T>();
    each_element(d, x.layout(), [&](std::int64_t i, std::int64_t c) {
      const auto ii = static_cast<std::size_t>(i);
      const auto cc = static_cast<std::size_t>(c);
      T g = gs[ii];
      if (fused_relu && xs[ii] * sc[cc] + sh[cc] <= T(0)) {
        g = T(0);
      }
      dx[ii] = g * sc[cc];
      ds[cc] += g * xs[ii];
      db[cc] += g;
    });
  });
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto gs = grad_out.data<T>();
    auto dx = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      dx[i] = xs[i] > T(0) ? gs[i] : T(0);
    }
  });
  return out;
}

Tensor dropout_backward(const Tensor& grad_out, double keep_prob, std::uint64_t seed,
                        std::int64_t sample_offset, Mode mode) {
  // The mask only depends on positions, so dropout(grad) is its own adjoint.
  return dropout(grad_out, keep_prob, seed, sample_offset, mode);
}

Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const OpSpec& spec) {
  const auto& d = x.dims();
  const PoolGeom g = pool_geometry(d, spec);
  Tensor out(d, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gs = grad_out.data<T>();
    auto dx = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t src = pool_argmax(x, spec, g, n, c, oy, ox);
            if (src >= 0) {
              dx[static_cast<std::size_t>(src)] += gs[grad_out.offset(n, c, oy, ox)];
            }
          }
        }
      }
    }
  });
  return out;
}

std::pair<Tensor, Tensor> concat_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& grad_out) {
  const auto& da = a.dims();
  const auto& db = b.dims();
  Tensor ga(da, a.dtype(), a.layout());
  Tensor gb(db, b.dtype(), b.layout());
  for (std::int64_t n = 0; n < da.n; ++n) {
    for (std::int64_t c = 0; c < da.c + db.c; ++c) {
      for (std::int64_t h = 0; h < da.h; ++h) {
        for (std::int64_t w = 0; w < da.w; ++w) {
          visit_float(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T v = grad_out.data<T>()[grad_out.offset(n, c, h, w)];
            if (c < da.c) {
              ga.data<T>()[ga.offset(n, c, h, w)] = v;
            } else {
              gb.data<T>()[gb.offset(n, c - da.c, h, w)] = v;
            }
          });
        }
      }
    }
  }
  return {std::move(ga), std::move(gb)};
}

Tensor add_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out,
                    bool fused_relu) {
  if (!fused_relu) {
    return grad_out;
  }
  const Tensor sum = add(a, b, false);
  return relu_backward(sum, grad_out);
}

Tensor softmax_backward(const Tensor& logits, const Tensor& grad_out) {
  const Tensor p = softmax(logits);
  const auto& d = logits.dims();
  Tensor out(d, logits.dtype(), logits.layout());
  visit_float(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ps = p.data<T>();
    auto gs = grad_out.data<T>();
    auto dx = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          double dot = 0.0;
          for (std::int64_t c = 0; c < d.c; ++c) {
            const auto i = p.offset(n, c, h, w);
            dot += static_cast<double>(gs[i]) * ps[i];
          }
          for (std::int64_t c = 0; c < d.c; ++c) {
            const auto i = p.offset(n, c, h, w);
            dx[i] = static_cast<T>(ps[i] * (gs[i] - dot));
          }
        }
      }
    }
  });
  return out;
}

Tensor resize_bilinear_backward(const Tensor& x, const Tensor& grad_out) {
  const auto& d = x.dims();
  const auto& go = grad_out.dims();
  Tensor out(d, x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gs = grad_out.data<T>();
    auto dx = out.data<T>();
    for (std::int64_t oy = 0; oy < go.h; ++oy) {
      std::int64_t y0, y1;
      T fy;
      bilinear_taps(oy, d.h, go.h, y0, y1, fy);
      for (std::int64_t ox = 0; ox < go.w; ++ox) {
        std::int64_t x0, x1;
        T fx;
        bilinear_taps(ox, d.w, go.w, x0, x1, fx);
        for (std::int64_t n = 0; n < d.n; ++n) {
          for (std::int64_t c = 0; c < d.c; ++c) {
            const T g = gs[grad_out.offset(n, c, oy, ox)];
            dx[out.offset(n, c, y0, x0)] += g * (T(1) - fy) * (T(1) - fx);
            dx[out.offset(n, c, y0, x1)] += g * (T(1) - fy) * fx;
            dx[out.offset(n, c, y1, x0)] += g * fy * (T(1) - fx);
            dx[out.offset(n, c, y1, x1)] += g * fy * fx;
          }
        }
      }
    }
  });
  return out;
}

Tensor reduce_sum_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T g = grad_out.data<T>()[0];
    auto dx = out.data<T>();
    std::fill(dx.begin(), dx.end(), g);
  });
  return out;
}

Tensor square_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto gs = grad_out.data<T>();
    auto dx = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      dx[i] = T(2) * xs[i] * gs[i];
    }
  });
  return out;
}

Tensor focal_loss_backward(const Tensor& logits, const Tensor& labels, double gamma,
                           std::span<const double> class_weights, const Tensor& grad_out) {
  check_loss_inputs(logits, labels, class_weights);
  const auto& d = logits.dims();
  const double pixels = static_cast<double>(d.n * d.h * d.w);
  const double upstream = grad_out.flat(0);
  Tensor out(d, logits.dtype(), logits.layout());
  std::vector<double> p(static_cast<std::size_t>(d.c));
  visit_float(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dx = out.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          const std::int64_t y = checked_label(labels, n, h, w, d.c);
          const double log_p = log_softmax_at(logits, n, h, w, y, p);
          const double py = p[static_cast<std::size_t>(y)];
          const double wy =
              class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
          const double q = std::max(0.0, 1.0 - py);
          // G = p * d/dp [ (1-p)^g * (-ln p) ]
          double first = 0.0;
          if (gamma != 0.0 && q > 0.0) {
            first = gamma * std::pow(q, gamma - 1.0) * py * (-log_p);
          }
          const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
          const double G = -first - mod;
          const double scale = upstream * wy * G / pixels;
          for (std::int64_t c = 0; c < d.c; ++c) {
            const double delta = c == y ? 1.0 : 0.0;
            dx[out.offset(n, c, h, w)] =
                static_cast<T>(scale * (delta - p[static_cast<std::size_t>(c)]));
          }
        }
      }
    }
  });
  return out;
}

}  // namespace detail

}  // namespace bonnet
