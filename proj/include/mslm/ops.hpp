#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mslm/kernels.hpp"
#include "mslm/ndarray.hpp"
#include "mslm/rng.hpp"
#include "mslm/tensor.hpp"

namespace mslm {

namespace detail {

template <typename T>
inline Tensor<T> make_op(std::string op, std::vector<std::shared_ptr<GraphNode<T>>> inputs,
                         NdArray<T> out, std::function<void(GraphNode<T>&)> bw) {
  if (!out.all_finite()) {
    throw NumericError(op + ": non-finite output");
  }
  auto node = std::make_shared<GraphNode<T>>(std::move(op), std::move(out));
  node->inputs = std::move(inputs);
  for (const auto& in : node->inputs) {
    if (in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->backward_fn = std::move(bw);
  return Tensor<T>(node);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a.value(), b.value());
  NdArray<T> out = a.value();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data[i] += b.value().data[i];
  return detail::make_op<T>("add", {a.node(), b.node()}, std::move(out), [](GraphNode<T>& nd) {
    const std::size_t m = nd.grad.numel();
    for (int s = 0; s < 2; ++s) {
      if (!nd.inputs[s]->requires_grad) continue;
      auto& g = nd.inputs[s]->grad.data;
      for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("sub", a.value(), b.value());
  NdArray<T> out = a.value();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data[i] -= b.value().data[i];
  return detail::make_op<T>("sub", {a.node(), b.node()}, std::move(out), [](GraphNode<T>& nd) {
    const std::size_t m = nd.grad.numel();
    if (nd.inputs[0]->requires_grad) {
      auto& g = nd.inputs[0]->grad.data;
      for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i];
    }
    if (nd.inputs[1]->requires_grad) {
      auto& g = nd.inputs[1]->grad.data;
      for (std::size_t i = 0; i < m; ++i) g[i] -= nd.grad.data[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul_elementwise", a.value(), b.value());
  NdArray<T> out = a.value();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data[i] *= b.value().data[i];
  return detail::make_op<T>("mul_elementwise", {a.node(), b.node()}, std::move(out),
                            [](GraphNode<T>& nd) {
                              const std::size_t m = nd.grad.numel();
                              const auto& av = nd.inputs[0]->value.data;
                              const auto& bv = nd.inputs[1]->value.data;
                              if (nd.inputs[0]->requires_grad) {
                                auto& g = nd.inputs[0]->grad.data;
                                for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i] * bv[i];
                              }
                              if (nd.inputs[1]->requires_grad) {
                                auto& g = nd.inputs[1]->grad.data;
                                for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i] * av[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& a, T c) {
  NdArray<T> out = a.value();
  for (auto& v : out.data) v *= c;
  return detail::make_op<T>("scale_by_constant", {a.node()}, std::move(out),
                            [c](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const std::size_t m = nd.grad.numel();
                              for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i] * c;
                            });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  // Exact form x * Phi(x), with Phi via erf.
  NdArray<T> out = a.value();
  for (auto& v : out.data) {
    const T x = v;
    v = T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
  }
  return detail::make_op<T>("gelu", {a.node()}, std::move(out), [](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const auto& x = nd.inputs[0]->value.data;
    const std::size_t m = nd.grad.numel();
    for (std::size_t i = 0; i < m; ++i) {
      const T xi = x[i];
      const T phi = T(0.5) * (T(1) + std::erf(xi * T(0.70710678118654752440)));
      const T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * xi * xi);
      g[i] += nd.grad.data[i] * (phi + xi * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.value().shape) + " as " +
                     shape_str(shape));
  }
  NdArray<T> out(std::move(shape), a.value().data);
  return detail::make_op<T>("reshape", {a.node()}, std::move(out), [](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const std::size_t m = nd.grad.numel();
    for (std::size_t i = 0; i < m; ++i) g[i] += nd.grad.data[i];
  });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  const auto& v = a.value();
  if (v.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(v.shape));
  const std::size_t M = v.rows(), N = v.cols();
  NdArray<T> out = NdArray<T>::zeros({N, M});
  transpose_into(v.data.data(), out.data.data(), M, N);
  return detail::make_op<T>("transpose", {a.node()}, std::move(out), [M, N](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const T* dy = nd.grad.data.data();
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t i = 0; i < M; ++i) g[i * N + j] += dy[j * M + i];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t len) {
  const auto& v = a.value();
  if (v.rank() != 2 || begin + len > v.rows()) {
    throw ShapeError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                     ") out of range for " + shape_str(v.shape));
  }
  const std::size_t D = v.cols();
  NdArray<T> out({len, D}, std::vector<T>(v.data.begin() + begin * D,
                                          v.data.begin() + (begin + len) * D));
  return detail::make_op<T>("slice", {a.node()}, std::move(out), [begin, len, D](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const T* dy = nd.grad.data.data();
    for (std::size_t i = 0; i < len * D; ++i) g[begin * D + i] += dy[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t len) {
  const auto& v = a.value();
  if (v.rank() != 2 || begin + len > v.cols()) {
    throw ShapeError("slice: cols [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                     ") out of range for " + shape_str(v.shape));
  }
  const std::size_t M = v.rows(), D = v.cols();
  NdArray<T> out = NdArray<T>::zeros({M, len});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < len; ++j) out.data[i * len + j] = v.data[i * D + begin + j];
  return detail::make_op<T>("slice", {a.node()}, std::move(out),
                            [begin, len, M, D](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const T* dy = nd.grad.data.data();
                              for (std::size_t i = 0; i < M; ++i)
                                for (std::size_t j = 0; j < len; ++j)
                                  g[i * D + begin + j] += dy[i * len + j];
                            });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last_dim: no inputs");
  const std::size_t M = parts[0].value().rows();
  std::size_t W = 0;
  std::vector<std::shared_ptr<GraphNode<T>>> inputs;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != M) {
      throw ShapeError("concat_last_dim: row mismatch " + shape_str(p.value().shape));
    }
    widths.push_back(p.value().cols());
    W += p.value().cols();
    inputs.push_back(p.node());
  }
  NdArray<T> out = NdArray<T>::zeros({M, W});
  std::size_t off = 0;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const auto& v = parts[s].value();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < widths[s]; ++j) out.data[i * W + off + j] = v.data[i * widths[s] + j];
    off += widths[s];
  }
  return detail::make_op<T>("concat_last_dim", std::move(inputs), std::move(out),
                            [M, W, widths](GraphNode<T>& nd) {
                              std::size_t o = 0;
                              for (std::size_t s = 0; s < nd.inputs.size(); ++s) {
                                const std::size_t w = widths[s];
                                if (nd.inputs[s]->requires_grad) {
                                  auto& g = nd.inputs[s]->grad.data;
                                  for (std::size_t i = 0; i < M; ++i)
                                    for (std::size_t j = 0; j < w; ++j)
                                      g[i * w + j] += nd.grad.data[i * W + o + j];
                                }
                                o += w;
                              }
                            });
}

template <typename T>
Tensor<T> concat_last_dim(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_cols<T>({a, b});
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  }
  const std::size_t M = av.rows(), K = av.cols(), N = bv.cols();
  NdArray<T> out = NdArray<T>::zeros({M, N});
  gemm_accumulate(av.data.data(), bv.data.data(), out.data.data(), M, K, N);
  return detail::make_op<T>("matmul", {a.node(), b.node()}, std::move(out),
                            [M, K, N](GraphNode<T>& nd) {
                              const auto& av2 = nd.inputs[0]->value;
                              const auto& bv2 = nd.inputs[1]->value;
                              if (nd.inputs[0]->requires_grad) {
                                // dA += dC * B^T
                                std::vector<T> bt(K * N);
                                transpose_into(bv2.data.data(), bt.data(), K, N);
                                gemm_accumulate(nd.grad.data.data(), bt.data(),
                                                nd.inputs[0]->grad.data.data(), M, N, K);
                              }
                              if (nd.inputs[1]->requires_grad) {
                                // dB += A^T * dC
                                std::vector<T> at(M * K);
                                transpose_into(av2.data.data(), at.data(), M, K);
                                gemm_accumulate(at.data(), nd.grad.data.data(),
                                                nd.inputs[1]->grad.data.data(), K, M, N);
                              }
                            });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (xv.rank() != 2 || bv.numel() != xv.cols()) {
    throw ShapeError("add_bias: shapes " + shape_str(xv.shape) + " and " + shape_str(bv.shape));
  }
  const std::size_t M = xv.rows(), D = xv.cols();
  NdArray<T> out = xv;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < D; ++j) out.data[i * D + j] += bv.data[j];
  return detail::make_op<T>("add_bias", {x.node(), b.node()}, std::move(out),
                            [M, D](GraphNode<T>& nd) {
                              if (nd.inputs[0]->requires_grad) {
                                auto& g = nd.inputs[0]->grad.data;
                                for (std::size_t i = 0; i < M * D; ++i) g[i] += nd.grad.data[i];
                              }
                              if (nd.inputs[1]->requires_grad) {
                                auto& g = nd.inputs[1]->grad.data;
                                for (std::size_t i = 0; i < M; ++i)
                                  for (std::size_t j = 0; j < D; ++j) g[j] += nd.grad.data[i * D + j];
                              }
                            });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::int32_t>& ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding_lookup: table must be rank-2");
  const std::size_t V = tv.rows(), D = tv.cols();
  NdArray<T> out = NdArray<T>::zeros({ids.size(), D});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(V) + ")");
    }
    std::copy_n(tv.data.begin() + static_cast<std::size_t>(id) * D, D, out.data.begin() + i * D);
  }
  return detail::make_op<T>("embedding_lookup", {table.node()}, std::move(out),
                            [ids, D](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              for (std::size_t i = 0; i < ids.size(); ++i) {
                                const std::size_t row = static_cast<std::size_t>(ids[i]) * D;
                                for (std::size_t j = 0; j < D; ++j) g[row + j] += nd.grad.data[i * D + j];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Normalization / attention pieces
// ---------------------------------------------------------------------------

// Softmax over the last dimension with an optional additive mask (0 where
// allowed, -inf where masked). Fully masked rows produce all-zero weights.
template <typename T>
Tensor<T> softmax_last_dim(const Tensor<T>& x, const NdArray<T>* additive_mask = nullptr) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("softmax_last_dim: expected rank-2, got " + shape_str(xv.shape));
  if (additive_mask && !xv.same_shape(*additive_mask)) {
    throw ShapeError("softmax_last_dim: mask shape " + shape_str(additive_mask->shape) +
                     " vs input " + shape_str(xv.shape));
  }
  const std::size_t M = xv.rows(), D = xv.cols();
  const T neg_inf = -std::numeric_limits<T>::infinity();
  NdArray<T> out = NdArray<T>::zeros({M, D});
  for (std::size_t i = 0; i < M; ++i) {
    T mx = neg_inf;
    for (std::size_t j = 0; j < D; ++j) {
      T v = xv.data[i * D + j];
      if (additive_mask) v += additive_mask->data[i * D + j];
      if (v > mx) mx = v;
    }
    if (mx == neg_inf) continue;  // fully masked row -> all zeros
    T sum = T(0);
    for (std::size_t j = 0; j < D; ++j) {
      T v = xv.data[i * D + j];
      if (additive_mask) v += additive_mask->data[i * D + j];
      const T e = std::exp(v - mx);
      out.data[i * D + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < D; ++j) out.data[i * D + j] /= sum;
  }
  return detail::make_op<T>("softmax_last_dim", {x.node()}, std::move(out),
                            [M, D](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const auto& y = nd.value.data;
                              for (std::size_t i = 0; i < M; ++i) {
                                T dot = T(0);
                                for (std::size_t j = 0; j < D; ++j) dot += nd.grad.data[i * D + j] * y[i * D + j];
                                for (std::size_t j = 0; j < D; ++j)
                                  g[i * D + j] += y[i * D + j] * (nd.grad.data[i * D + j] - dot);
                              }
                            });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("layer_norm: expected rank-2, got " + shape_str(xv.shape));
  const std::size_t M = xv.rows(), D = xv.cols();
  if (gain.value().numel() != D || bias.value().numel() != D) {
    throw ShapeError("layer_norm: gain/bias length must be " + std::to_string(D));
  }
  NdArray<T> out = NdArray<T>::zeros({M, D});
  auto xhat = std::make_shared<std::vector<T>>(M * D);
  auto inv_std = std::make_shared<std::vector<T>>(M);
  for (std::size_t i = 0; i < M; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < D; ++j) mean += xv.data[i * D + j];
    mean /= T(D);
    T var = T(0);
    for (std::size_t j = 0; j < D; ++j) {
      const T d = xv.data[i * D + j] - mean;
      var += d * d;
    }
    var /= T(D);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < D; ++j) {
      const T h = (xv.data[i * D + j] - mean) * inv;
      (*xhat)[i * D + j] = h;
      out.data[i * D + j] = gain.value().data[j] * h + bias.value().data[j];
    }
  }
  return detail::make_op<T>(
      "layer_norm", {x.node(), gain.node(), bias.node()}, std::move(out),
      [M, D, xhat, inv_std](GraphNode<T>& nd) {
        const auto& gval = nd.inputs[1]->value.data;
        for (std::size_t i = 0; i < M; ++i) {
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (std::size_t j = 0; j < D; ++j) {
            const T dxh = nd.grad.data[i * D + j] * gval[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * (*xhat)[i * D + j];
          }
          if (nd.inputs[0]->requires_grad) {
            auto& gx = nd.inputs[0]->grad.data;
            const T inv = (*inv_std)[i];
            for (std::size_t j = 0; j < D; ++j) {
              const T dxh = nd.grad.data[i * D + j] * gval[j];
              gx[i * D + j] += inv * (dxh - sum_dxhat / T(D) -
                                      (*xhat)[i * D + j] * sum_dxhat_xhat / T(D));
            }
          }
        }
        if (nd.inputs[1]->requires_grad) {
          auto& gg = nd.inputs[1]->grad.data;
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < D; ++j) gg[j] += nd.grad.data[i * D + j] * (*xhat)[i * D + j];
        }
        if (nd.inputs[2]->requires_grad) {
          auto& gb = nd.inputs[2]->grad.data;
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < D; ++j) gb[j] += nd.grad.data[i * D + j];
        }
      });
}

// Inverted dropout; identity when p == 0 or in eval mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) {
    throw ShapeError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!train || p == 0.0) return x;
  const std::size_t n = x.value().numel();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(n);
  const T scale = T(1.0 / (1.0 - p));
  NdArray<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    const bool k = rng.next_double() >= p;
    (*keep)[i] = k;
    out.data[i] = k ? out.data[i] * scale : T(0);
  }
  return detail::make_op<T>("dropout", {x.node()}, std::move(out), [keep, scale](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const std::size_t m = nd.grad.numel();
    for (std::size_t i = 0; i < m; ++i)
      if ((*keep)[i]) g[i] += nd.grad.data[i] * scale;
  });
}

// ---------------------------------------------------------------------------
// Pooling (sequence axis of [N, D] or a rank-1 [N] vector)
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
inline std::pair<std::size_t, std::size_t> pool_dims(const char* op, const NdArray<T>& v,
                                                     std::size_t k) {
  const std::size_t N = v.rank() == 1 ? v.shape[0] : v.rows();
  const std::size_t D = v.rank() == 1 ? 1 : v.cols();
  if (v.rank() > 2) throw ShapeError(std::string(op) + ": expected rank 1 or 2");
  if (k == 0 || N % k != 0) {
    throw ShapeError(std::string(op) + ": length " + std::to_string(N) +
                     " not divisible by kernel " + std::to_string(k));
  }
  return {N, D};
}
}  // namespace detail

template <typename T>
Tensor<T> mean_pool_1d(const Tensor<T>& x, std::size_t k) {
  const auto& xv = x.value();
  auto [N, D] = detail::pool_dims("mean_pool_1d", xv, k);
  Shape out_shape = xv.rank() == 1 ? Shape{N / k} : Shape{N / k, D};
  NdArray<T> out = NdArray<T>::zeros(out_shape);
  for (std::size_t f = 0; f < N / k; ++f)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < D; ++j) out.data[f * D + j] += xv.data[(f * k + i) * D + j];
  const T invk = T(1) / T(k);
  for (auto& v : out.data) v *= invk;
  return detail::make_op<T>("mean_pool_1d", {x.node()}, std::move(out),
                            [k, N = N, D = D, invk](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              for (std::size_t f = 0; f < N / k; ++f)
                                for (std::size_t i = 0; i < k; ++i)
                                  for (std::size_t j = 0; j < D; ++j)
                                    g[(f * k + i) * D + j] += nd.grad.data[f * D + j] * invk;
                            });
}

template <typename T>
Tensor<T> max_pool_1d(const Tensor<T>& x, std::size_t k) {
  const auto& xv = x.value();
  auto [N, D] = detail::pool_dims("max_pool_1d", xv, k);
  Shape out_shape = xv.rank() == 1 ? Shape{N / k} : Shape{N / k, D};
  NdArray<T> out = NdArray<T>::zeros(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  for (std::size_t f = 0; f < N / k; ++f) {
    for (std::size_t j = 0; j < D; ++j) {
      std::size_t best = f * k;
      T bv = xv.data[best * D + j];
      for (std::size_t i = 1; i < k; ++i) {
        const T v = xv.data[(f * k + i) * D + j];
        if (v > bv) {
          bv = v;
          best = f * k + i;
        }
      }
      out.data[f * D + j] = bv;
      (*argmax)[f * D + j] = best;
    }
  }
  return detail::make_op<T>("max_pool_1d", {x.node()}, std::move(out),
                            [argmax, D = D](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const std::size_t m = nd.grad.numel();
                              for (std::size_t i = 0; i < m; ++i)
                                g[(*argmax)[i] * D + i % D] += nd.grad.data[i];
                            });
}

// ---------------------------------------------------------------------------
// Strided convolutions over the sequence axis
// ---------------------------------------------------------------------------

// Causal strided convolution: kernel size == stride == k, so frame j is a
// learned linear function of positions [j*k, (j+1)*k - 1] only.
// w: [k*D, D_out], b: [D_out].
template <typename T>
Tensor<T> causal_conv_1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         std::size_t k) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.rows() % k != 0) {
    throw ShapeError("causal_conv_1d: input " + shape_str(xv.shape) + " not divisible by stride " +
                     std::to_string(k));
  }
  if (w.value().rows() != k * xv.cols()) {
    throw ShapeError("causal_conv_1d: weight rows " + std::to_string(w.value().rows()) +
                     " != k*D = " + std::to_string(k * xv.cols()));
  }
  Tensor<T> frames = reshape(x, {xv.rows() / k, k * xv.cols()});
  return linear(frames, w, b);
}

// Transpose convolution: kernel size == stride == r, so output position p is a
// learned linear function of input frame floor(p/r) only.
// w: [D, r*D_out], b: [r*D_out].
template <typename T>
Tensor<T> transpose_conv_1d(const Tensor<T>& h, const Tensor<T>& w, const Tensor<T>& b,
                            std::size_t r) {
  const auto& hv = h.value();
  if (hv.rank() != 2) throw ShapeError("transpose_conv_1d: expected rank-2 input");
  if (w.value().cols() % r != 0) {
    throw ShapeError("transpose_conv_1d: weight cols must be divisible by factor");
  }
  const std::size_t d_out = w.value().cols() / r;
  Tensor<T> wide = linear(h, w, b);  // [F, r*d_out]
  return reshape(wide, {hv.rows() * r, d_out});
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.value().data) s += v;
  return detail::make_op<T>("sum", {x.node()}, NdArray<T>::scalar(s), [](GraphNode<T>& nd) {
    auto& g = nd.inputs[0]->grad.data;
    const T dy = nd.grad.data[0];
    for (auto& v : g) v += dy;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const std::size_t n = x.value().numel();
  return scale_by(sum_all(x), T(1) / T(n));
}

// Mean cross-entropy of integer targets under softmax(logits). Returns a
// scalar in nats.
template <typename T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits,
                                    const std::vector<std::int32_t>& targets) {
  const auto& lv = logits.value();
  if (lv.rank() != 2 || lv.rows() != targets.size()) {
    throw ShapeError("cross_entropy_from_logits: logits " + shape_str(lv.shape) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t N = lv.rows(), V = lv.cols();
  auto probs = std::make_shared<std::vector<T>>(N * V);
  T loss = T(0);
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
      throw ShapeError("cross_entropy_from_logits: target id out of range");
    }
    T mx = lv.data[i * V];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, lv.data[i * V + j]);
    T sum = T(0);
    for (std::size_t j = 0; j < V; ++j) {
      const T e = std::exp(lv.data[i * V + j] - mx);
      (*probs)[i * V + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] /= sum;
    loss += mx + std::log(sum) - lv.data[i * V + static_cast<std::size_t>(targets[i])];
  }
  loss /= T(N);
  return detail::make_op<T>("cross_entropy_from_logits", {logits.node()}, NdArray<T>::scalar(loss),
                            [probs, targets, N, V](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const T dy = nd.grad.data[0] / T(N);
                              for (std::size_t i = 0; i < N; ++i) {
                                for (std::size_t j = 0; j < V; ++j) g[i * V + j] += dy * (*probs)[i * V + j];
                                g[i * V + static_cast<std::size_t>(targets[i])] -= dy;
                              }
                            });
}

// Mean cross-entropy between softmax(logits) and a fixed target distribution
// per row: -sum_v p[v] log q[v].
template <typename T>
Tensor<T> cross_entropy_vs_distribution(const Tensor<T>& logits, const NdArray<T>& target_dist) {
  const auto& lv = logits.value();
  check_same_shape("cross_entropy_vs_distribution", lv, target_dist);
  if (lv.rank() != 2) throw ShapeError("cross_entropy_vs_distribution: expected rank-2 logits");
  const std::size_t N = lv.rows(), V = lv.cols();
  auto probs = std::make_shared<std::vector<T>>(N * V);
  auto tgt = std::make_shared<std::vector<T>>(target_dist.data);
  T loss = T(0);
  for (std::size_t i = 0; i < N; ++i) {
    T mx = lv.data[i * V];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, lv.data[i * V + j]);
    T sum = T(0);
    for (std::size_t j = 0; j < V; ++j) {
      const T e = std::exp(lv.data[i * V + j] - mx);
      (*probs)[i * V + j] = e;
      sum += e;
    }
    const T lse = mx + std::log(sum);
    T row = T(0);
    for (std::size_t j = 0; j < V; ++j) {
      (*probs)[i * V + j] /= sum;
      row += (*tgt)[i * V + j] * (lse - lv.data[i * V + j]);
    }
    loss += row;
  }
  loss /= T(N);
  return detail::make_op<T>("cross_entropy_vs_distribution", {logits.node()},
                            NdArray<T>::scalar(loss), [probs, tgt, N, V](GraphNode<T>& nd) {
                              auto& g = nd.inputs[0]->grad.data;
                              const T dy = nd.grad.data[0] / T(N);
                              for (std::size_t i = 0; i < N * V; ++i)
                                g[i] += dy * ((*probs)[i] - (*tgt)[i]);
                            });
}

}  // namespace mslm
