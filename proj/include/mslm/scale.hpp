#pragma once

#include <string>

#include "mslm/nn.hpp"
#include "mslm/ops.hpp"

namespace mslm {

enum class DownsampleMethod { avg_pool, max_pool, causal_conv };

inline DownsampleMethod downsample_method_from_string(const std::string& s) {
  if (s == "avg_pool") return DownsampleMethod::avg_pool;
  if (s == "max_pool") return DownsampleMethod::max_pool;
  if (s == "causal_conv") return DownsampleMethod::causal_conv;
  throw std::invalid_argument("unknown downsampler '" + s + "'");
}

inline std::string to_string(DownsampleMethod m) {
  switch (m) {
    case DownsampleMethod::avg_pool: return "avg_pool";
    case DownsampleMethod::max_pool: return "max_pool";
    case DownsampleMethod::causal_conv: return "causal_conv";
  }
  return "?";
}

// Causal downsampler by an integer factor: frame j depends only on input
// positions [j*k, (j+1)*k - 1]. Factor 1 is the identity for every method.
template <typename T>
struct Downsampler {
  DownsampleMethod method = DownsampleMethod::avg_pool;
  std::size_t factor = 1;
  Tensor<T> w, b;  // causal_conv only: [k*D, D], [D]

  static Downsampler create(ParamStore<T>& ps, const std::string& prefix, DownsampleMethod m,
                            std::size_t k, std::size_t d_model, Rng& rng) {
    Downsampler d;
    d.method = m;
    d.factor = k;
    if (m == DownsampleMethod::causal_conv && k > 1) {
      d.w = ps.normal(prefix + "w", {k * d_model, d_model}, rng);
      d.b = ps.zeros(prefix + "b", {d_model});
    }
    return d;
  }
};

template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const Downsampler<T>& d) {
  if (d.factor == 1) return x;
  if (x.value().rows() % d.factor != 0) {
    throw ShapeError("downsample: length " + std::to_string(x.value().rows()) +
                     " not divisible by factor " + std::to_string(d.factor));
  }
  switch (d.method) {
    case DownsampleMethod::avg_pool: return mean_pool_1d(x, d.factor);
    case DownsampleMethod::max_pool: return max_pool_1d(x, d.factor);
    case DownsampleMethod::causal_conv: return causal_conv_1d(x, d.w, d.b, d.factor);
  }
  throw ShapeError("downsample: bad method");
}

// Transpose-convolution upsampler: output position p is a linear function of
// input frame floor(p/r). No nonlinearity unless configured.
template <typename T>
struct Upsampler {
  std::size_t factor = 1;
  bool nonlinearity = false;
  Tensor<T> w, b;  // [D, r*D], [r*D]

  static Upsampler create(ParamStore<T>& ps, const std::string& prefix, std::size_t r,
                          std::size_t d_model, bool nonlinearity, Rng& rng) {
    Upsampler u;
    u.factor = r;
    u.nonlinearity = nonlinearity;
    u.w = ps.normal(prefix + "w", {d_model, r * d_model}, rng);
    u.b = ps.zeros(prefix + "b", {r * d_model});
    return u;
  }
};

template <typename T>
Tensor<T> upsample(const Tensor<T>& h, const Upsampler<T>& u) {
  Tensor<T> out = transpose_conv_1d(h, u.w, u.b, u.factor);
  return u.nonlinearity ? gelu(out) : out;
}

// Fusion f: concatenate two equal-dimension sequences positionwise and
// project back to d_model through a GeLU.
template <typename T>
struct Fuser {
  Tensor<T> w, b;  // [2*D, D], [D]

  static Fuser create(ParamStore<T>& ps, const std::string& prefix, std::size_t d_model,
                      Rng& rng) {
    Fuser f;
    f.w = ps.normal(prefix + "w", {2 * d_model, d_model}, rng);
    f.b = ps.zeros(prefix + "b", {d_model});
    return f;
  }
};

template <typename T>
Tensor<T> fuse(const Tensor<T>& a, const Tensor<T>& b, const Fuser<T>& f) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    throw ShapeError("fuse: shapes " + shape_str(a.value().shape) + " vs " +
                     shape_str(b.value().shape));
  }
  return gelu(linear(concat_last_dim(a, b), f.w, f.b));
}

}  // namespace mslm
