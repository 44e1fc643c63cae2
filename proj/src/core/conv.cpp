// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "bonnet/ops.hpp"
#include "bonnet/parallel.hpp"
#include "gemm.hpp"
#include "kernels.hpp"

namespace bonnet {

namespace {

// Geometry of a forward convolution. Transposed convolution reuses it with
// the roles of input and output swapped.
struct ConvGeom {
  std::int64_t cin = 0, h = 0, w = 0;    // convolution input
  std::int64_t cout = 0, ho = 0, wo = 0; // convolution output
  std::int64_t kh = 1, kw = 1;
  std::int64_t stride = 1, dil = 1;
  std::int64_t pad_t = 0, pad_l = 0;

  std::int64_t k() const { return cin * kh * kw; }
  std::int64_t p() const { return ho * wo; }
};

std::int64_t same_pad_total(std::int64_t in, std::int64_t out, std::int64_t k,
                            std::int64_t s, std::int64_t d) {
  return std::max<std::int64_t>((out - 1) * s + d * (k - 1) + 1 - in, 0);
}

void fill_pads(ConvGeom& g, Padding padding) {
  if (padding == Padding::valid) {
    g.pad_t = g.pad_l = 0;
    return;
  }
  g.pad_t = same_pad_total(g.h, g.ho, g.kh, g.stride, g.dil) / 2;
  g.pad_l = same_pad_total(g.w, g.wo, g.kw, g.stride, g.dil) / 2;
}

void check_spatial(const Dims& d, const char* what) {
  if (d.n <= 0 || d.c <= 0 || d.h <= 0 || d.w <= 0) {
    throw ShapeError(std::string(what) + ": zero-extent dims " + to_string(d));
  }
}

void check_bias(const Tensor* bias, std::int64_t channels, const char* what) {
  if (bias != nullptr && bias->size() != channels) {
    throw ShapeError(std::string(what) + ": bias has " + std::to_string(bias->size()) +
                     " values, expected " + std::to_string(channels));
  }
}

ConvGeom conv_geometry(const Dims& x, const Dims& w, const OpSpec& spec) {
  check_spatial(x, "conv2d input");
  check_spatial(w, "conv2d weights");
  if (x.c != w.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) +
                     " channels but weights expect " + std::to_string(w.c));
  }
  ConvGeom g;
  g.cin = x.c;
  g.h = x.h;
  g.w = x.w;
  g.cout = w.n;
  g.kh = w.h;
  g.kw = w.w;
  g.stride = spec.stride;
  g.dil = spec.dilation;
  g.ho = conv_output_extent(x.h, g.kh, g.stride, g.dil, spec.padding);
  g.wo = conv_output_extent(x.w, g.kw, g.stride, g.dil, spec.padding);
  fill_pads(g, spec.padding);
  return g;
}

// For transposed convolution: x is the conv *output*, weights (C_in_t,
// C_out_t, kh, kw) are the conv weights (cout = C_in_t, cin = C_out_t).
ConvGeom transposed_geometry(const Dims& x, const Dims& w, const OpSpec& spec) {
  check_spatial(x, "transposed_conv2d input");
  check_spatial(w, "transposed_conv2d weights");
  if (x.c != w.n) {
    throw ShapeError("transposed_conv2d: input has " + std::to_string(x.c) +
                     " channels but weights expect " + std::to_string(w.n));
  }
  ConvGeom g;
  g.cout = x.c;
  g.ho = x.h;
  g.wo = x.w;
  g.cin = w.c;
  g.kh = w.h;
  g.kw = w.w;
  g.stride = spec.stride;
  g.dil = spec.dilation;
  g.h = transposed_output_extent(x.h, g.kh, g.stride, g.dil, spec.padding);
  g.w = transposed_output_extent(x.w, g.kw, g.stride, g.dil, spec.padding);
  fill_pads(g, spec.padding);
  return g;
}

// cols[K x P], K ordered (ci, ky, kx).
template <class T>
void im2col(const T* x, Layout layout, const ConvGeom& g, T* cols) {
  const std::int64_t P = g.p();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad_t + ky * g.dil;
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad_l + kx * g.dil;
            if (ix < 0 || ix >= g.w) {
              out[ox] = T(0);
            } else {
              out[ox] = layout == Layout::nchw ? x[(ci * g.h + iy) * g.w + ix]
                                               : x[(iy * g.w + ix) * g.cin + ci];
            }
          }
        }
      }
    }
  }
}

// colsT[P x K], same K ordering as im2col.
template <class T>
void im2col_t(const T* x, Layout layout, const ConvGeom& g, T* cols) {
  const std::int64_t K = g.k();
  for (std::int64_t oy = 0; oy < g.ho; ++oy) {
    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
      T* row = cols + (oy * g.wo + ox) * K;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const std::int64_t iy = oy * g.stride - g.pad_t + ky * g.dil;
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const std::int64_t ix = ox * g.stride - g.pad_l + kx * g.dil;
          const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            T v = T(0);
            if (inside) {
              v = layout == Layout::nchw ? x[(ci * g.h + iy) * g.w + ix]
                                         : x[(iy * g.w + ix) * g.cin + ci];
            }
            row[(ci * g.kh + ky) * g.kw + kx] = v;
          }
        }
      }
    }
  }
}

// Scatter-add of cols[K x P] into an NCHW image. For every destination
// element the contributions arrive in (ky, kx, oy, ox) order.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::int64_t P = g.p();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    T* plane = x + ci * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad_t + ky * g.dil;
          if (iy < 0 || iy >= g.h) {
            continue;
          }
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad_l + kx * g.dil;
            if (ix >= 0 && ix < g.w) {
              plane[iy * g.w + ix] += row[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of colsT[P x K] into an NHWC image, same per-element order as
// col2im.
template <class T>
void col2im_t(const T* cols, const ConvGeom& g, T* x) {
  const std::int64_t K = g.k();
  for (std::int64_t ky = 0; ky < g.kh; ++ky) {
    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        const std::int64_t iy = oy * g.stride - g.pad_t + ky * g.dil;
        if (iy < 0 || iy >= g.h) {
          continue;
        }
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          const std::int64_t ix = ox * g.stride - g.pad_l + kx * g.dil;
          if (ix < 0 || ix >= g.w) {
            continue;
          }
          const T* row = cols + (oy * g.wo + ox) * K;
          T* px = x + (iy * g.w + ix) * g.cin;
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            px[ci] += row[(ci * g.kh + ky) * g.kw + kx];
          }
        }
      }
    }
  }
}

template <class T>
void add_bias_relu(T* out, Layout layout, std::int64_t channels, std::int64_t pixels,
                   const Tensor* bias, bool relu) {
  const T* b = bias != nullptr ? bias->data<T>().data() : nullptr;
  if (layout == Layout::nchw) {
    for (std::int64_t c = 0; c < channels; ++c) {
      T* row = out + c * pixels;
      const T bc = b != nullptr ? b[c] : T(0);
      for (std::int64_t p = 0; p < pixels; ++p) {
        T v = b != nullptr ? row[p] + bc : row[p];
        row[p] = relu && v < T(0) ? T(0) : v;
      }
    }
  } else {
    for (std::int64_t p = 0; p < pixels; ++p) {
      T* px = out + p * channels;
      for (std::int64_t c = 0; c < channels; ++c) {
        T v = b != nullptr ? px[c] + b[c] : px[c];
        px[c] = relu && v < T(0) ? T(0) : v;
      }
    }
  }
}

template <class T>
Tensor conv2d_impl(const Tensor& x, const Tensor& weights, const Tensor* bias,
                   const OpSpec& spec, int threads) {
  const ConvGeom g = conv_geometry(x.dims(), weights.dims(), spec);
  check_bias(bias, g.cout, "conv2d");
  Tensor wstore;
  const Tensor& w = detail::as_nchw(weights, wstore);
  const Layout layout = x.layout();
  const std::int64_t N = x.dims().n, K = g.k(), P = g.p();
  Tensor out({N, g.cout, g.ho, g.wo}, x.dtype(), layout);
  const T* xd = x.data<T>().data();
  const T* wd = w.data<T>().data();
  T* od = out.data<T>().data();
  Buffer<T> cols(static_cast<std::size_t>(K * P));
  if (layout == Layout::nchw) {
    for (std::int64_t n = 0; n < N; ++n) {
      im2col(xd + n * g.cin * g.h * g.w, layout, g, cols.data());
      T* on = od + n * g.cout * P;
      parallel_for(0, g.cout, threads, [&](std::int64_t lo, std::int64_t hi) {
        detail::gemm_acc(hi - lo, P, K, wd + lo * K, K, cols.data(), P, on + lo * P, P);
      });
      add_bias_relu(on, layout, g.cout, P, bias, spec.fused_relu);
    }
  } else {
    Buffer<T> wt(static_cast<std::size_t>(K * g.cout));
    detail::transpose(g.cout, K, wd, wt.data());
    for (std::int64_t n = 0; n < N; ++n) {
      im2col_t(xd + n * g.cin * g.h * g.w, layout, g, cols.data());
      T* on = od + n * g.cout * P;
      parallel_for(0, P, threads, [&](std::int64_t lo, std::int64_t hi) {
        detail::gemm_acc(hi - lo, g.cout, K, cols.data() + lo * K, K, wt.data(), g.cout,
                         on + lo * g.cout, g.cout);
      });
      add_bias_relu(on, layout, g.cout, P, bias, spec.fused_relu);
    }
  }
  return out;
}

template <class T>
Tensor transposed_conv2d_impl(const Tensor& x, const Tensor& weights, const Tensor* bias,
                              const OpSpec& spec, int threads) {
  const ConvGeom g = transposed_geometry(x.dims(), weights.dims(), spec);
  check_bias(bias, g.cin, "transposed_conv2d");
  Tensor wstore;
  const Tensor& w = detail::as_nchw(weights, wstore);
  const Layout layout = x.layout();
  const std::int64_t N = x.dims().n, K = g.k(), P = g.p();
  Tensor out({N, g.cin, g.h, g.w}, x.dtype(), layout);
  const T* xd = x.data<T>().data();
  const T* wd = w.data<T>().data();  // (cout x K)
  T* od = out.data<T>().data();
  Buffer<T> cols(static_cast<std::size_t>(K * P));
  if (layout == Layout::nchw) {
    Buffer<T> wt(static_cast<std::size_t>(K * g.cout));
    detail::transpose(g.cout, K, wd, wt.data());
    for (std::int64_t n = 0; n < N; ++n) {
      std::fill(cols.begin(), cols.end(), T(0));
      const T* xn = xd + n * g.cout * P;
      parallel_for(0, K, threads, [&](std::int64_t lo, std::int64_t hi) {
        detail::gemm_acc(hi - lo, P, g.cout, wt.data() + lo * g.cout, g.cout, xn, P,
                         cols.data() + lo * P, P);
      });
      T* on = od + n * g.cin * g.h * g.w;
      col2im(cols.data(), g, on);
      add_bias_relu(on, layout, g.cin, g.h * g.w, bias, spec.fused_relu);
    }
  } else {
    for (std::int64_t n = 0; n < N; ++n) {
      std::fill(cols.begin(), cols.end(), T(0));
      const T* xn = xd + n * g.cout * P;
      parallel_for(0, P, threads, [&](std::int64_t lo, std::int64_t hi) {
        detail::gemm_acc(hi - lo, K, g.cout, xn + lo * g.cout, g.cout, wd, K,
                         cols.data() + lo * K, K);
      });
      T* on = od + n * g.cin * g.h * g.w;
      col2im_t(cols.data(), g, on);
      add_bias_relu(on, layout, g.cin, g.h * g.w, bias, spec.fused_relu);
    }
  }
  return out;
}

template <class T>
Tensor conv2d_direct_impl(const Tensor& x, const Tensor& w, const Tensor* bias,
                          const OpSpec& spec) {
  const ConvGeom g = conv_geometry(x.dims(), w.dims(), spec);
  check_bias(bias, g.cout, "conv2d");
  const std::int64_t N = x.dims().n;
  Tensor out({N, g.cout, g.ho, g.wo}, x.dtype(), x.layout());
  auto xd = x.data<T>();
  auto wd = w.data<T>();
  auto od = out.data<T>();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t co = 0; co < g.cout; ++co) {
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            for (std::int64_t ky = 0; ky < g.kh; ++ky) {
              const std::int64_t iy = oy * g.stride - g.pad_t + ky * g.dil;
              for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                const std::int64_t ix = ox * g.stride - g.pad_l + kx * g.dil;
                if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
                  continue;
                }
                acc += static_cast<double>(wd[w.offset(co, ci, ky, kx)]) *
                       xd[x.offset(n, ci, iy, ix)];
              }
            }
          }
          T sum = static_cast<T>(acc);
          if (bias != nullptr) {
            sum += bias->data<T>()[static_cast<std::size_t>(co)];
          }
          if (spec.fused_relu && sum < T(0)) {
            sum = T(0);
          }
          od[out.offset(n, co, oy, ox)] = sum;
        }
      }
    }
  }
  return out;
}

void require_nchw(const Tensor& t, const char* what) {
  if (t.layout() != Layout::nchw) {
    throw ShapeError(std::string(what) + ": backward is implemented for NCHW only");
  }
}

template <class T>
detail::ConvGrads conv2d_backward_impl(const Tensor& x, const Tensor& w, const Tensor& gout,
                                       const OpSpec& spec, bool need_x, bool need_w,
                                       bool need_b) {
  require_nchw(x, "conv2d");
  const ConvGeom g = conv_geometry(x.dims(), w.dims(), spec);
  const std::int64_t N = x.dims().n, K = g.k(), P = g.p();
  if (gout.dims() != Dims{N, g.cout, g.ho, g.wo}) {
    throw ShapeError("conv2d backward: gradient dims " + to_string(gout.dims()));
  }
  detail::ConvGrads grads;
  const T* xd = x.data<T>().data();
  const T* wd = w.data<T>().data();
  const T* gd = gout.data<T>().data();
  Buffer<T> cols(static_cast<std::size_t>(K * P));
  if (need_x) {
    grads.input = Tensor(x.dims(), x.dtype());
    Buffer<T> wt(static_cast<std::size_t>(K * g.cout));
    detail::transpose(g.cout, K, wd, wt.data());
    T* dx = grads.input.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      std::fill(cols.begin(), cols.end(), T(0));
      detail::gemm_acc(K, P, g.cout, wt.data(), g.cout, gd + n * g.cout * P, P, cols.data(),
                       P);
      col2im(cols.data(), g, dx + n * g.cin * g.h * g.w);
    }
  }
  if (need_w) {
    grads.weights = Tensor(w.dims(), w.dtype());
    T* dw = grads.weights.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      im2col_t(xd + n * g.cin * g.h * g.w, Layout::nchw, g, cols.data());
      detail::gemm_acc(g.cout, K, P, gd + n * g.cout * P, P, cols.data(), K, dw, K);
    }
  }
  if (need_b) {
    grads.bias = Tensor({1, g.cout, 1, 1}, x.dtype());
    T* db = grads.bias.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < g.cout; ++c) {
        const T* row = gd + (n * g.cout + c) * P;
        T s = T(0);
        for (std::int64_t p = 0; p < P; ++p) {
          s += row[p];
        }
        db[c] += s;
      }
    }
  }
  return grads;
}

template <class T>
detail::ConvGrads transposed_backward_impl(const Tensor& x, const Tensor& w,
                                           const Tensor& gout, const OpSpec& spec,
                                           bool need_x, bool need_w, bool need_b) {
  require_nchw(x, "transposed_conv2d");
  const ConvGeom g = transposed_geometry(x.dims(), w.dims(), spec);
  const std::int64_t N = x.dims().n, K = g.k(), P = g.p();
  const std::int64_t out_px = g.h * g.w;
  if (gout.dims() != Dims{N, g.cin, g.h, g.w}) {
    throw ShapeError("transposed_conv2d backward: gradient dims " + to_string(gout.dims()));
  }
  detail::ConvGrads grads;
  const T* xd = x.data<T>().data();
  const T* wd = w.data<T>().data();
  const T* gd = gout.data<T>().data();
  Buffer<T> cols(static_cast<std::size_t>(K * P));
  if (need_x) {
    grads.input = Tensor(x.dims(), x.dtype());
    T* dx = grads.input.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      im2col(gd + n * g.cin * out_px, Layout::nchw, g, cols.data());
      detail::gemm_acc(g.cout, P, K, wd, K, cols.data(), P, dx + n * g.cout * P, P);
    }
  }
  if (need_w) {
    grads.weights = Tensor(w.dims(), w.dtype());
    T* dw = grads.weights.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      im2col_t(gd + n * g.cin * out_px, Layout::nchw, g, cols.data());
      detail::gemm_acc(g.cout, K, P, xd + n * g.cout * P, P, cols.data(), K, dw, K);
    }
  }
  if (need_b) {
    grads.bias = Tensor({1, g.cin, 1, 1}, x.dtype());
    T* db = grads.bias.data<T>().data();
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < g.cin; ++c) {
        const T* row = gd + (n * g.cin + c) * out_px;
        T s = T(0);
        for (std::int64_t p = 0; p < out_px; ++p) {
          s += row[p];
        }
        db[c] += s;
      }
    }
  }
  return grads;
}

void check_conv_inputs(const Tensor& x, const Tensor& w, const Tensor* b, const OpSpec& spec) {
  spec.validate();
  if (!x.is_float() || !w.is_float() || x.dtype() != w.dtype() ||
      (b != nullptr && b->dtype() != x.dtype())) {
    throw ShapeError("convolution requires float tensors of one dtype");
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t dilation, Padding padding) {
  if (in <= 0) {
    throw ShapeError("convolution over a zero-extent axis");
  }
  if (padding == Padding::same) {
    return (in + stride - 1) / stride;
  }
  const std::int64_t span = dilation * (kernel - 1) + 1;
  if (in < span) {
    throw ShapeError("valid convolution: kernel span " + std::to_string(span) +
                     " exceeds input extent " + std::to_string(in));
  }
  return (in - span) / stride + 1;
}

std::int64_t transposed_output_extent(std::int64_t in, std::int64_t kernel,
                                      std::int64_t stride, std::int64_t dilation,
                                      Padding padding) {
  if (in <= 0) {
    throw ShapeError("transposed convolution over a zero-extent axis");
  }
  if (padding == Padding::same) {
    return in * stride;
  }
  return (in - 1) * stride + dilation * (kernel - 1) + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor* bias, const OpSpec& spec,
              int threads) {
  check_conv_inputs(x, weights, bias, spec);
  return visit_float(x.dtype(), [&](auto tag) {
    return conv2d_impl<decltype(tag)>(x, weights, bias, spec, threads);
  });
}

Tensor conv2d_direct(const Tensor& x, const Tensor& weights, const Tensor* bias,
                     const OpSpec& spec) {
  check_conv_inputs(x, weights, bias, spec);
  return visit_float(x.dtype(), [&](auto tag) {
    return conv2d_direct_impl<decltype(tag)>(x, weights, bias, spec);
  });
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& weights, const Tensor* bias,
                         const OpSpec& spec, int threads) {
  check_conv_inputs(x, weights, bias, spec);
  return visit_float(x.dtype(), [&](auto tag) {
    return transposed_conv2d_impl<decltype(tag)>(x, weights, bias, spec, threads);
  });
}

namespace detail {

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out,
                          const OpSpec& spec, bool need_input, bool need_weights,
                          bool need_bias) {
  check_conv_inputs(x, weights, nullptr, spec);
  Tensor wstore;
  const Tensor& w = as_nchw(weights, wstore);
  return visit_float(x.dtype(), [&](auto tag) {
    return conv2d_backward_impl<decltype(tag)>(x, w, grad_out, spec, need_input,
                                               need_weights, need_bias);
  });
}

ConvGrads transposed_conv2d_backward(const Tensor& x, const Tensor& weights,
                                     const Tensor& grad_out, const OpSpec& spec,
                                     bool need_input, bool need_weights, bool need_bias) {
  check_conv_inputs(x, weights, nullptr, spec);
  Tensor wstore;
  const Tensor& w = as_nchw(weights, wstore);
  return visit_float(x.dtype(), [&](auto tag) {
    return transposed_backward_impl<decltype(tag)>(x, w, grad_out, spec, need_input,
                                                   need_weights, need_bias);
  });
}

}  // namespace detail

}  // namespace bonnet
