#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mslm/ops.hpp"

namespace mslm {

// Central-difference gradient verification, always in f64.
// `build` maps the current inputs to a scalar loss tensor; it is re-invoked
// for every probe so the analytic path is exercised independently of the
// numeric estimate. Returns max over all input elements of
// |analytic - numeric| / max(1, |numeric|).
inline double grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& build,
    std::vector<NdArray<double>> inputs, double step = 1e-5) {
  std::vector<Tensor<double>> params;
  params.reserve(inputs.size());
  for (auto& a : inputs) params.push_back(Tensor<double>::param(a));

  Tensor<double> loss = build(params);
  backward(loss);

  std::vector<NdArray<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  const auto eval = [&]() {
    std::vector<Tensor<double>> fresh;
    fresh.reserve(inputs.size());
    for (auto& a : inputs) fresh.push_back(Tensor<double>::param(a));
    return build(fresh).item();
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (std::size_t i = 0; i < inputs[p].numel(); ++i) {
      const double saved = inputs[p].data[i];
      inputs[p].data[i] = saved + step;
      const double lp = eval();
      inputs[p].data[i] = saved - step;
      const double lm = eval();
      inputs[p].data[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double err = std::abs(analytic[p].data[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > worst) worst = err;
    }
  }
  return worst;
}

namespace detail {
inline NdArray<double> random_array(Shape s, Rng& rng, double scale = 1.0) {
  NdArray<double> a = NdArray<double>::zeros(std::move(s));
  for (auto& v : a.data) v = rng.normal() * scale;
  return a;
}
}  // namespace detail

// Named-op driver over randomized inputs; one entry per differentiable op
// kind. max_pool inputs are jittered away from ties, dropout uses a fixed
// mask by re-seeding the stream per probe.
inline double grad_check_op(const std::string& kind, std::uint64_t seed) {
  Rng rng(seed);
  using Vec = std::vector<Tensor<double>>;

  if (kind == "matmul") {
    auto a = detail::random_array({3, 4}, rng);
    auto b = detail::random_array({4, 2}, rng);
    return grad_check([](const Vec& in) { return sum_all(matmul(in[0], in[1])); }, {a, b});
  }
  if (kind == "add" || kind == "sub" || kind == "mul_elementwise") {
    auto a = detail::random_array({3, 5}, rng);
    auto b = detail::random_array({3, 5}, rng);
    return grad_check(
        [kind](const Vec& in) {
          Tensor<double> y = kind == "add"   ? add(in[0], in[1])
                             : kind == "sub" ? sub(in[0], in[1])
                                             : mul(in[0], in[1]);
          return sum_all(mul(y, y));
        },
        {a, b});
  }
  if (kind == "scale_by_constant") {
    auto a = detail::random_array({4, 4}, rng);
    return grad_check([](const Vec& in) { return sum_all(mul(scale_by(in[0], 1.7), in[0])); }, {a});
  }
  if (kind == "gelu") {
    auto a = detail::random_array({16}, rng);
    a.shape = {4, 4};
    return grad_check([](const Vec& in) { return sum_all(mul(gelu(in[0]), in[0])); }, {a});
  }
  if (kind == "concat_last_dim") {
    auto a = detail::random_array({3, 2}, rng);
    auto b = detail::random_array({3, 4}, rng);
    return grad_check(
        [](const Vec& in) {
          auto y = concat_last_dim(in[0], in[1]);
          return sum_all(mul(y, y));
        },
        {a, b});
  }
  if (kind == "slice") {
    auto a = detail::random_array({6, 5}, rng);
    return grad_check(
        [](const Vec& in) {
          auto y = slice_cols(slice_rows(in[0], 1, 4), 2, 3);
          return sum_all(mul(y, y));
        },
        {a});
  }
  if (kind == "reshape" || kind == "transpose") {
    auto a = detail::random_array({4, 6}, rng);
    return grad_check(
        [kind](const Vec& in) {
          auto y = kind == "reshape" ? reshape(in[0], {8, 3}) : transpose2d(in[0]);
          return sum_all(mul(y, y));
        },
        {a});
  }
  if (kind == "embedding_lookup") {
    auto table = detail::random_array({7, 4}, rng);
    std::vector<std::int32_t> ids = {3, 0, 6, 3};
    return grad_check(
        [ids](const Vec& in) {
          auto y = embedding_lookup(in[0], ids);
          return sum_all(mul(y, y));
        },
        {table});
  }
  if (kind == "softmax_last_dim") {
    auto a = detail::random_array({4, 6}, rng);
    auto w = detail::random_array({4, 6}, rng);
    return grad_check(
        [](const Vec& in) { return sum_all(mul(softmax_last_dim(in[0]), in[1])); }, {a, w});
  }
  if (kind == "softmax_masked") {
    auto a = detail::random_array({4, 6}, rng);
    auto w = detail::random_array({4, 6}, rng);
    auto mask = NdArray<double>::zeros({4, 6});
    const double ninf = -std::numeric_limits<double>::infinity();
    mask.data[2] = ninf;  // row 0, col 2
    mask.data[6] = ninf;  // row 1, col 0
    return grad_check(
        [mask](const Vec& in) { return sum_all(mul(softmax_last_dim(in[0], &mask), in[1])); },
        {a, w});
  }
  if (kind == "layer_norm") {
    auto x = detail::random_array({3, 8}, rng);
    auto g = detail::random_array({8}, rng, 0.5);
    for (auto& v : g.data) v += 1.0;
    auto b = detail::random_array({8}, rng, 0.1);
    auto w = detail::random_array({3, 8}, rng);
    return grad_check(
        [w](const Vec& in) {
          return sum_all(mul(layer_norm(in[0], in[1], in[2], 1e-5), in[3]));
        },
        {x, g, b, w});
  }
  if (kind == "dropout") {
    auto x = detail::random_array({5, 4}, rng);
    const std::uint64_t mask_seed = rng.next_u64();
    return grad_check(
        [mask_seed](const Vec& in) {
          Rng r(mask_seed);  // fixed mask across probes
          auto y = dropout(in[0], 0.4, r, true);
          return sum_all(mul(y, y));
        },
        {x});
  }
  if (kind == "mean_pool_1d" || kind == "max_pool_1d") {
    auto x = detail::random_array({8, 3}, rng);
    if (kind == "max_pool_1d") {
      // keep elements well separated so probes cannot cross a tie
      for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = std::floor(x.data[i] * 8.0) / 4.0;
      for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] += 1e-3 * static_cast<double>(i % 7);
    }
    return grad_check(
        [kind](const Vec& in) {
          auto y = kind == "mean_pool_1d" ? mean_pool_1d(in[0], 4) : max_pool_1d(in[0], 4);
          return sum_all(mul(y, y));
        },
        {x}, kind == "max_pool_1d" ? 1e-6 : 1e-5);
  }
  if (kind == "causal_conv_1d") {
    auto x = detail::random_array({8, 3}, rng);
    auto w = detail::random_array({12, 3}, rng, 0.5);
    auto b = detail::random_array({3}, rng, 0.1);
    return grad_check(
        [](const Vec& in) {
          auto y = causal_conv_1d(in[0], in[1], in[2], 4);
          return sum_all(mul(y, y));
        },
        {x, w, b});
  }
  if (kind == "transpose_conv_1d") {
    auto h = detail::random_array({2, 3}, rng);
    auto w = detail::random_array({3, 12}, rng, 0.5);
    auto b = detail::random_array({12}, rng, 0.1);
    return grad_check(
        [](const Vec& in) {
          auto y = transpose_conv_1d(in[0], in[1], in[2], 4);
          return sum_all(mul(y, y));
        },
        {h, w, b});
  }
  if (kind == "linear") {
    auto x = detail::random_array({5, 3}, rng);
    auto w = detail::random_array({3, 4}, rng);
    auto b = detail::random_array({4}, rng);
    return grad_check(
        [](const Vec& in) {
          auto y = linear(in[0], in[1], in[2]);
          return sum_all(mul(y, y));
        },
        {x, w, b});
  }
  if (kind == "cross_entropy_from_logits") {
    auto logits = detail::random_array({4, 6}, rng);
    std::vector<std::int32_t> targets = {2, 0, 5, 1};
    return grad_check(
        [targets](const Vec& in) { return cross_entropy_from_logits(in[0], targets); }, {logits});
  }
  if (kind == "cross_entropy_vs_distribution") {
    auto logits = detail::random_array({3, 5}, rng);
    NdArray<double> dist = NdArray<double>::zeros({3, 5});
    Rng r2(seed + 1);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        dist.data[i * 5 + j] = r2.next_double() + 0.05;
        s += dist.data[i * 5 + j];
      }
      for (std::size_t j = 0; j < 5; ++j) dist.data[i * 5 + j] /= s;
    }
    return grad_check(
        [dist](const Vec& in) { return cross_entropy_vs_distribution(in[0], dist); }, {logits});
  }
  throw ShapeError("grad_check_op: unknown op kind '" + kind + "'");
}

inline const std::vector<std::string>& differentiable_op_kinds() {
  static const std::vector<std::string> kinds = {
      "matmul",        "add",          "sub",
      "mul_elementwise", "scale_by_constant", "gelu",
      "concat_last_dim", "slice",      "reshape",
      "transpose",     "embedding_lookup", "softmax_last_dim",
      "softmax_masked", "layer_norm",  "dropout",
      "mean_pool_1d",  "max_pool_1d",  "causal_conv_1d",
      "transpose_conv_1d", "linear",   "cross_entropy_from_logits",
      "cross_entropy_vs_distribution"};
  return kinds;
}

}  // namespace mslm
