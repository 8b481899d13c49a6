#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "sumo/common.hpp"
#include "sumo/tensor.hpp"

namespace sumo::nn {

namespace detail {

// Dot product with sixteen independent accumulator lanes. Kept out of line so
// the compiler reliably vectorizes it; the summation order is fixed, which
// keeps results identical across runs and thread counts.
template <typename T>
__attribute__((noinline)) T dot_span(const T* __restrict__ a, const T* __restrict__ b,
                                     std::size_t n) {
  T lanes[16] = {};
  T tail = T(0);
  std::size_t t = 0;
  for (; t + 16 <= n; t += 16)
    for (std::size_t l = 0; l < 16; ++l) lanes[l] += a[t + l] * b[t + l];
  for (; t < n; ++t) tail += a[t] * b[t];
  T acc = tail;
  for (std::size_t l = 0; l < 16; ++l) acc += lanes[l];
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1D convolution (cross-correlation, stride 1, zero padding)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv1d {
  Tensor<T> kernel;  // [out_ch, in_ch, k]
  Tensor<T> bias;    // [out_ch]
  std::size_t dilation = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  static Conv1d make_same(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                          std::size_t dilation = 1) {
    Conv1d c;
    c.kernel = Tensor<T>({out_ch, in_ch, k});
    c.bias = Tensor<T>({out_ch});
    c.dilation = dilation;
    std::size_t span = dilation * (k - 1);
    c.pad_left = span / 2;
    c.pad_right = span - c.pad_left;
    return c;
  }

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t kernel_size() const { return kernel.dim(2); }
};

template <typename T>
struct ConvGrads {
  Tensor<T> x;
  Tensor<T> kernel;
  Tensor<T> bias;
};

// out[b,o,t] = bias[o] + sum_{c,j} kernel[o,c,j] * x[b,c,t + j*dil - pad_left]
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Conv1d<T>& layer) {
  if (x.rank() != 3) throw ShapeError("conv1d expects [B, C, T] input");
  if (x.dim(1) != layer.in_channels())
    throw ShapeError("conv1d channel mismatch: input " + x.shape_str() + ", kernel " +
                     layer.kernel.shape_str());
  const std::size_t B = x.dim(0), C = x.dim(1), n = x.dim(2);
  const std::size_t O = layer.out_channels(), k = layer.kernel_size(), dil = layer.dilation;
  const long long span = static_cast<long long>(dil * (k - 1));
  const long long t_out_ll = static_cast<long long>(n + layer.pad_left + layer.pad_right) - span;
  if (t_out_ll < 1) throw ShapeError("conv1d input too short for kernel span");
  const std::size_t t_out = static_cast<std::size_t>(t_out_ll);

  Tensor<T> out({B, O, t_out});
  parallel_for(B * O, [&](std::size_t bo) {
    const std::size_t b = bo / O, o = bo % O;
    T* orow = out.row(b, o);
    const T bias = layer.bias[o];
    for (std::size_t t = 0; t < t_out; ++t) orow[t] = bias;
    for (std::size_t c = 0; c < C; ++c) {
      const T* xrow = x.row(b, c);
      for (std::size_t j = 0; j < k; ++j) {
        const T w = layer.kernel(o, c, j);
        if (w == T(0)) continue;
        // out[t] += w * x[t + j*dil - pad_left] over the valid range
        const long long off = static_cast<long long>(j * dil) - static_cast<long long>(layer.pad_left);
        const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
        const long long t_hi_ll = static_cast<long long>(n) - off;
        const std::size_t t_hi = std::min(t_out, t_hi_ll < 0 ? 0 : static_cast<std::size_t>(t_hi_ll));
        const T* xs = xrow + off;
        for (std::size_t t = t_lo; t < t_hi; ++t) orow[t] += w * xs[t];
      }
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv1d_backward(const Tensor<T>& x, const Conv1d<T>& layer,
                             const Tensor<T>& grad_out) {
  const std::size_t B = x.dim(0), C = x.dim(1), n = x.dim(2);
  const std::size_t O = layer.out_channels(), k = layer.kernel_size(), dil = layer.dilation;
  if (grad_out.rank() != 3 || grad_out.dim(0) != B || grad_out.dim(1) != O)
    throw ShapeError("conv1d_backward gradient shape mismatch");
  const std::size_t t_out = grad_out.dim(2);

  ConvGrads<T> g;
  g.x = Tensor<T>({B, C, n});
  g.kernel = Tensor<T>({O, C, k});
  g.bias = Tensor<T>({O});

  // bias and kernel gradients, parallel over output channels
  parallel_for(O, [&](std::size_t o) {
    double bsum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* grow = grad_out.row(b, o);
      for (std::size_t t = 0; t < t_out; ++t) bsum += static_cast<double>(grow[t]);
    }
    g.bias[o] = static_cast<T>(bsum);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < k; ++j) {
        const long long off = static_cast<long long>(j * dil) - static_cast<long long>(layer.pad_left);
        T acc = T(0);
        for (std::size_t b = 0; b < B; ++b) {
          const T* grow = grad_out.row(b, o);
          const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
          const long long t_hi_ll = static_cast<long long>(n) - off;
          const std::size_t t_hi =
              std::min(t_out, t_hi_ll < 0 ? 0 : static_cast<std::size_t>(t_hi_ll));
          const T* xs = x.row(b, c) + off;
          if (t_lo < t_hi) acc += detail::dot_span(grow + t_lo, xs + t_lo, t_hi - t_lo);
        }
        g.kernel(o, c, j) = acc;
      }
    }
  });

  // input gradient: g.x[b,c,i] += kernel[o,c,j] * grad_out[b,o,t] with i = t + j*dil - pad_left
  parallel_for(B * C, [&](std::size_t bc) {
    const std::size_t b = bc / C, c = bc % C;
    T* gxrow = g.x.row(b, c);
    for (std::size_t o = 0; o < O; ++o) {
      const T* grow = grad_out.row(b, o);
      for (std::size_t j = 0; j < k; ++j) {
        const T w = layer.kernel(o, c, j);
        if (w == T(0)) continue;
        const long long off = static_cast<long long>(j * dil) - static_cast<long long>(layer.pad_left);
        const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
        const long long t_hi_ll = static_cast<long long>(n) - off;
        const std::size_t t_hi =
            std::min(t_out, t_hi_ll < 0 ? 0 : static_cast<std::size_t>(t_hi_ll));
        T* gxs = gxrow + off;
        for (std::size_t t = t_lo; t < t_hi; ++t) gxs[t] += w * grow[t];
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

// Subgradient 0 at x = 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (!x.same_shape(grad_out)) throw ShapeError("relu_backward shape mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over (B, T) per channel
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

template <typename T>
struct BatchNorm1d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm1d make(std::size_t ch) {
    BatchNorm1d bn;
    bn.gamma = Tensor<T>::full({ch}, T(1));
    bn.beta = Tensor<T>({ch});
    bn.running_mean = Tensor<T>({ch});
    bn.running_var = Tensor<T>::full({ch}, T(1));
    return bn;
  }

  std::size_t channels() const { return gamma.dim(0); }
};

template <typename T>
struct BatchNormCache {
  Tensor<T> x_hat;             // normalized input
  std::vector<double> inv_std; // per channel
};

// Train mode normalizes with biased batch statistics and advances the running
// stats (unbiased variance) by `momentum`; eval mode uses the running stats.
template <typename T>
Tensor<T> batchnorm1d(const Tensor<T>& x, BatchNorm1d<T>& layer, Mode mode,
                      BatchNormCache<T>* cache = nullptr) {
  if (x.rank() != 3 || x.dim(1) != layer.channels())
    throw ShapeError("batchnorm1d expects [B, C, T] with matching channels");
  const std::size_t B = x.dim(0), C = x.dim(1), n = x.dim(2);
  Tensor<T> out(x.shape());

  if (mode == Mode::eval) {
    parallel_for(C, [&](std::size_t c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(layer.running_var[c]) + layer.eps);
      const double mean = layer.running_mean[c];
      const double gamma = layer.gamma[c], beta = layer.beta[c];
      for (std::size_t b = 0; b < B; ++b) {
        const T* xrow = x.row(b, c);
        T* orow = out.row(b, c);
        for (std::size_t t = 0; t < n; ++t)
          orow[t] = static_cast<T>(gamma * ((xrow[t] - mean) * inv) + beta);
      }
    });
    return out;
  }

  const std::size_t count = B * n;
  if (count < 2) throw ShapeError("batchnorm1d train mode needs B*T >= 2");
  if (cache) {
    cache->x_hat = Tensor<T>(x.shape());
    cache->inv_std.assign(C, 0.0);
  }
  parallel_for(C, [&](std::size_t c) {
    double sum_lanes[4] = {}, sq_lanes[4] = {};
    double sum = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* xrow = x.row(b, c);
      std::size_t t = 0;
      for (; t + 4 <= n; t += 4) {
        for (std::size_t l = 0; l < 4; ++l) {
          const double v = xrow[t + l];
          sum_lanes[l] += v;
          sq_lanes[l] += v * v;
        }
      }
      for (; t < n; ++t) {
        sum += xrow[t];
        sq += static_cast<double>(xrow[t]) * xrow[t];
      }
    }
    for (std::size_t l = 0; l < 4; ++l) {
      sum += sum_lanes[l];
      sq += sq_lanes[l];
    }
    const double mean = sum / static_cast<double>(count);
    double var = sq / static_cast<double>(count) - mean * mean;
    if (var < 0.0) var = 0.0;
    const double inv = 1.0 / std::sqrt(var + layer.eps);
    const double gamma = layer.gamma[c], beta = layer.beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const T* xrow = x.row(b, c);
      T* orow = out.row(b, c);
      T* hrow = cache ? cache->x_hat.row(b, c) : nullptr;
      for (std::size_t t = 0; t < n; ++t) {
        const double xh = (xrow[t] - mean) * inv;
        if (hrow) hrow[t] = static_cast<T>(xh);
        orow[t] = static_cast<T>(gamma * xh + beta);
      }
    }
    if (cache) cache->inv_std[c] = inv;
    const double unbiased =
        count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
    layer.running_mean[c] =
        static_cast<T>((1.0 - layer.momentum) * layer.running_mean[c] + layer.momentum * mean);
    layer.running_var[c] =
        static_cast<T>((1.0 - layer.momentum) * layer.running_var[c] + layer.momentum * unbiased);
  });
  return out;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> x;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm1d_backward(const BatchNorm1d<T>& layer,
                                       const BatchNormCache<T>& cache,
                                       const Tensor<T>& grad_out) {
  const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), n = grad_out.dim(2);
  const double count = static_cast<double>(B * n);
  BatchNormGrads<T> g;
  g.x = Tensor<T>(grad_out.shape());
  g.gamma = Tensor<T>({C});
  g.beta = Tensor<T>({C});
  parallel_for(C, [&](std::size_t c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* grow = grad_out.row(b, c);
      const T* hrow = cache.x_hat.row(b, c);
      for (std::size_t t = 0; t < n; ++t) {
        sum_g += grow[t];
        sum_gx += static_cast<double>(grow[t]) * hrow[t];
      }
    }
    g.beta[c] = static_cast<T>(sum_g);
    g.gamma[c] = static_cast<T>(sum_gx);
    const double gamma = layer.gamma[c];
    const double inv = cache.inv_std[c];
    for (std::size_t b = 0; b < B; ++b) {
      const T* grow = grad_out.row(b, c);
      const T* hrow = cache.x_hat.row(b, c);
      T* gx = g.x.row(b, c);
      for (std::size_t t = 0; t < n; ++t) {
        const double d = count * grow[t] - sum_g - hrow[t] * sum_gx;
        gx[t] = static_cast<T>(gamma * inv / count * d);
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling (ceil mode) and nearest-neighbor upsampling
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResult {
  Tensor<T> out;
  std::vector<std::size_t> indices;  // flat argmax per output element
};

template <typename T>
MaxPoolResult<T> maxpool1d(const Tensor<T>& x, std::size_t width) {
  if (width < 1) throw ConfigError("pool width must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), n = x.dim(2);
  const std::size_t t_out = (n + width - 1) / width;
  MaxPoolResult<T> res;
  res.out = Tensor<T>({B, C, t_out});
  res.indices.assign(B * C * t_out, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* xrow = x.row(b, c);
      T* orow = res.out.row(b, c);
      std::size_t* irow = res.indices.data() + (b * C + c) * t_out;
      for (std::size_t t = 0; t < t_out; ++t) {
        const std::size_t lo = t * width;
        const std::size_t hi = std::min(n, lo + width);
        std::size_t best = lo;
        for (std::size_t i = lo + 1; i < hi; ++i)
          if (xrow[i] > xrow[best]) best = i;
        orow[t] = xrow[best];
        irow[t] = best;
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool1d_backward(const MaxPoolResult<T>& pooled, std::size_t input_len,
                             const Tensor<T>& grad_out) {
  const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), t_out = grad_out.dim(2);
  Tensor<T> gx({B, C, input_len});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* grow = grad_out.row(b, c);
      const std::size_t* irow = pooled.indices.data() + (b * C + c) * t_out;
      T* gxrow = gx.row(b, c);
      for (std::size_t t = 0; t < t_out; ++t) gxrow[irow[t]] += grow[t];
    }
  return gx;
}

// Each sample repeated `factor` times, right-trimmed to target_len.
template <typename T>
Tensor<T> upsample_nn(const Tensor<T>& x, std::size_t factor, std::size_t target_len) {
  const std::size_t B = x.dim(0), C = x.dim(1), n = x.dim(2);
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  if (target_len > factor * n || target_len < factor * n - factor + 1)
    throw ShapeError("upsample target length out of range");
  Tensor<T> out({B, C, target_len});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* xrow = x.row(b, c);
      T* orow = out.row(b, c);
      for (std::size_t t = 0; t < target_len; ++t) orow[t] = xrow[t / factor];
    }
  return out;
}

template <typename T>
Tensor<T> upsample_nn_backward(std::size_t factor, std::size_t input_len,
                               const Tensor<T>& grad_out) {
  const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), t_out = grad_out.dim(2);
  Tensor<T> gx({B, C, input_len});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* grow = grad_out.row(b, c);
      T* gxrow = gx.row(b, c);
      for (std::size_t t = 0; t < t_out; ++t) gxrow[t / factor] += grow[t];
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Channel concatenation and split
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels requires equal batch and length");
  const std::size_t B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), n = a.dim(2);
  Tensor<T> out({B, C1 + C2, n});
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t c = 0; c < C1; ++c)
      std::copy(a.row(bi, c), a.row(bi, c) + n, out.row(bi, c));
    for (std::size_t c = 0; c < C2; ++c)
      std::copy(b.row(bi, c), b.row(bi, c) + n, out.row(bi, C1 + c));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, std::size_t c1) {
  const std::size_t B = g.dim(0), C = g.dim(1), n = g.dim(2);
  if (c1 > C) throw ShapeError("split point exceeds channel count");
  Tensor<T> a({B, c1, n}), b({B, C - c1, n});
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t c = 0; c < c1; ++c) std::copy(g.row(bi, c), g.row(bi, c) + n, a.row(bi, c));
    for (std::size_t c = c1; c < C; ++c)
      std::copy(g.row(bi, c), g.row(bi, c) + n, b.row(bi, c - c1));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Two-channel softmax over the channel axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(1) != 2)
    throw ShapeError("softmax_channels expects [B, 2, T]");
  const std::size_t B = x.dim(0), n = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* x0 = x.row(b, 0);
    const T* x1 = x.row(b, 1);
    T* o0 = out.row(b, 0);
    T* o1 = out.row(b, 1);
    for (std::size_t t = 0; t < n; ++t) {
      const double m = std::max<double>(x0[t], x1[t]);
      const double e0 = std::exp(static_cast<double>(x0[t]) - m);
      const double e1 = std::exp(static_cast<double>(x1[t]) - m);
      const double z = e0 + e1;
      o0[t] = static_cast<T>(e0 / z);
      o1[t] = static_cast<T>(e1 / z);
    }
  }
  return out;
}

// grad_x_i = p_i * (g_i - sum_j p_j g_j), per (b, t)
template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& grad_out) {
  if (!probs.same_shape(grad_out)) throw ShapeError("softmax backward shape mismatch");
  const std::size_t B = probs.dim(0), n = probs.dim(2);
  Tensor<T> gx(probs.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* p0 = probs.row(b, 0);
    const T* p1 = probs.row(b, 1);
    const T* g0 = grad_out.row(b, 0);
    const T* g1 = grad_out.row(b, 1);
    T* o0 = gx.row(b, 0);
    T* o1 = gx.row(b, 1);
    for (std::size_t t = 0; t < n; ++t) {
      const double dot = static_cast<double>(p0[t]) * g0[t] + static_cast<double>(p1[t]) * g1[t];
      o0[t] = static_cast<T>(p0[t] * (g0[t] - dot));
      o1[t] = static_cast<T>(p1[t] * (g1[t] - dot));
    }
  }
  return gx;
}

}  // namespace sumo::nn
