#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mslm/mask.hpp"
#include "mslm/ops.hpp"

namespace mslm {

// Named registry of trainable leaves. Iteration follows creation order, which
// is fixed by model construction, so optimizer sweeps are deterministic.
template <typename T>
class ParamStore {
 public:
  Tensor<T> create(const std::string& name, NdArray<T> init) {
    if (map_.count(name)) throw ShapeError("param '" + name + "' already exists");
    Tensor<T> t = Tensor<T>::param(std::move(init));
    names_.push_back(name);
    map_.emplace(name, t);
    return t;
  }

  Tensor<T> normal(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02) {
    NdArray<T> a = NdArray<T>::zeros(std::move(shape));
    for (auto& v : a.data) v = static_cast<T>(rng.normal() * stddev);
    return create(name, std::move(a));
  }

  Tensor<T> zeros(const std::string& name, Shape shape) {
    return create(name, NdArray<T>::zeros(std::move(shape)));
  }

  Tensor<T> ones(const std::string& name, Shape shape) {
    return create(name, NdArray<T>::full(std::move(shape), T(1)));
  }

  Tensor<T> get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ShapeError("unknown param '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& name : names_) n += map_.at(name).value().numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : names_) map_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor<T>> map_;
};

// One subset of heads bound to a key/value source and a mask. Groups must be
// contiguous in head index and together cover [0, num_heads).
template <typename T>
struct HeadGroup {
  std::size_t first_head = 0;
  std::size_t num_heads = 0;
  std::size_t source = 0;                     // index into kv_sources
  const NdArray<T>* additive_mask = nullptr;  // [query_len, source_len]
};

template <typename T>
struct LayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;

  static LayerParams create(ParamStore<T>& ps, const std::string& prefix, std::size_t d_model,
                            std::size_t d_ff, Rng& rng) {
    LayerParams p;
    p.wq = ps.normal(prefix + "wq", {d_model, d_model}, rng);
    p.bq = ps.zeros(prefix + "bq", {d_model});
    p.wk = ps.normal(prefix + "wk", {d_model, d_model}, rng);
    p.bk = ps.zeros(prefix + "bk", {d_model});
    p.wv = ps.normal(prefix + "wv", {d_model, d_model}, rng);
    p.bv = ps.zeros(prefix + "bv", {d_model});
    p.wo = ps.normal(prefix + "wo", {d_model, d_model}, rng);
    p.bo = ps.zeros(prefix + "bo", {d_model});
    p.ff_w1 = ps.normal(prefix + "ff.w1", {d_model, d_ff}, rng);
    p.ff_b1 = ps.zeros(prefix + "ff.b1", {d_ff});
    p.ff_w2 = ps.normal(prefix + "ff.w2", {d_ff, d_model}, rng);
    p.ff_b2 = ps.zeros(prefix + "ff.b2", {d_model});
    p.ln1_g = ps.ones(prefix + "ln1.g", {d_model});
    p.ln1_b = ps.zeros(prefix + "ln1.b", {d_model});
    p.ln2_g = ps.ones(prefix + "ln2.g", {d_model});
    p.ln2_b = ps.zeros(prefix + "ln2.b", {d_model});
    return p;
  }
};

struct DropoutCtx {
  double prob = 0.0;
  Rng* rng = nullptr;
  bool train = false;
};

template <typename T>
inline Tensor<T> maybe_dropout(const Tensor<T>& x, const DropoutCtx& dc) {
  if (!dc.train || dc.prob == 0.0) return x;
  return dropout(x, dc.prob, *dc.rng, true);
}

// Multi-head attention with per-group key/value sources. Per head:
// softmax(Q K^T / sqrt(d_k) + mask) V; fully masked rows contribute exact
// zero vectors. Heads are concatenated in index order, then projected.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& queries,
                               const std::vector<Tensor<T>>& kv_sources,
                               const std::vector<HeadGroup<T>>& groups, std::size_t num_heads,
                               const LayerParams<T>& p, const DropoutCtx& dc) {
  const std::size_t d_model = queries.value().cols();
  if (d_model % num_heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  const std::size_t d_k = d_model / num_heads;
  const std::size_t n_q = queries.value().rows();

  std::size_t covered = 0;
  for (const auto& g : groups) {
    if (g.first_head != covered) throw ShapeError("attention: head groups must tile [0, heads)");
    covered += g.num_heads;
  }
  if (covered != num_heads) throw ShapeError("attention: head groups do not cover all heads");

  Tensor<T> q_all = linear(queries, p.wq, p.bq);

  // Project each distinct source once.
  std::vector<Tensor<T>> k_all(kv_sources.size()), v_all(kv_sources.size());
  std::vector<bool> used(kv_sources.size(), false);
  for (const auto& g : groups) used.at(g.source) = true;
  for (std::size_t s = 0; s < kv_sources.size(); ++s) {
    if (!used[s]) continue;
    k_all[s] = linear(kv_sources[s], p.wk, p.bk);
    v_all[s] = linear(kv_sources[s], p.wv, p.bv);
  }

  const T inv_sqrt_dk = T(1) / std::sqrt(T(d_k));
  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(num_heads);
  for (const auto& g : groups) {
    if (g.additive_mask) {
      const std::size_t src_len = kv_sources[g.source].value().rows();
      if (g.additive_mask->rows() != n_q || g.additive_mask->cols() != src_len) {
        throw ShapeError("attention: mask " + shape_str(g.additive_mask->shape) +
                         " does not fit queries " + std::to_string(n_q) + " x keys " +
                         std::to_string(src_len));
      }
    }
    for (std::size_t h = g.first_head; h < g.first_head + g.num_heads; ++h) {
      Tensor<T> qh = slice_cols(q_all, h * d_k, d_k);
      Tensor<T> kh = slice_cols(k_all[g.source], h * d_k, d_k);
      Tensor<T> vh = slice_cols(v_all[g.source], h * d_k, d_k);
      Tensor<T> scores = scale_by(matmul(qh, transpose2d(kh)), inv_sqrt_dk);
      Tensor<T> weights = softmax_last_dim(scores, g.additive_mask);
      weights = maybe_dropout(weights, dc);
      head_outputs.push_back(matmul(weights, vh));
    }
  }
  Tensor<T> merged = head_outputs.size() == 1 ? head_outputs[0] : concat_cols(head_outputs);
  return linear(merged, p.wo, p.bo);
}

// Post-norm residual block: LayerNorm(x + Attn(x)), then
// LayerNorm(h + FF(h)) with a GeLU feedforward.
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const std::vector<Tensor<T>>& kv_sources,
                            const std::vector<HeadGroup<T>>& groups, std::size_t num_heads,
                            const LayerParams<T>& p, const DropoutCtx& dc, T ln_eps = T(1e-5)) {
  Tensor<T> attn = multi_head_attention(x, kv_sources, groups, num_heads, p, dc);
  Tensor<T> h = layer_norm(add(x, maybe_dropout(attn, dc)), p.ln1_g, p.ln1_b, ln_eps);
  Tensor<T> ff = linear(gelu(linear(h, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
  return layer_norm(add(h, maybe_dropout(ff, dc)), p.ln2_g, p.ln2_b, ln_eps);
}

// Self-attention convenience: all heads on x with one mask.
template <typename T>
Tensor<T> transformer_layer_self(const Tensor<T>& x, const NdArray<T>* mask,
                                 std::size_t num_heads, const LayerParams<T>& p,
                                 const DropoutCtx& dc) {
  std::vector<HeadGroup<T>> groups{{0, num_heads, 0, mask}};
  return transformer_layer<T>(x, {x}, groups, num_heads, p, dc);
}

// Word embedding + learned position embedding.
template <typename T>
Tensor<T> embed(const Tensor<T>& word_table, const Tensor<T>& pos_table,
                const std::vector<std::int32_t>& tokens, std::size_t position_offset) {
  std::vector<std::int32_t> positions(tokens.size());
  const std::size_t max_pos = pos_table.value().rows();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t pos = position_offset + i;
    if (pos >= max_pos) {
      throw ShapeError("embed: position " + std::to_string(pos) + " >= max context " +
                       std::to_string(max_pos));
    }
    positions[i] = static_cast<std::int32_t>(pos);
  }
  return add(embedding_lookup(word_table, tokens), embedding_lookup(pos_table, positions));
}

// Linear map to vocab logits; optionally weight-tied to the word embedding.
template <typename T>
Tensor<T> lm_head(const Tensor<T>& h, const Tensor<T>& weight_or_embedding, const Tensor<T>& bias,
                  bool tied) {
  if (tied) return add_bias(matmul(h, transpose2d(weight_or_embedding)), bias);
  return linear(h, weight_or_embedding, bias);
}

}  // namespace mslm
