#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mslm/ndarray.hpp"

namespace mslm {

// Index of the last token covered by frame j at scale k. A frame may be
// attended by query t only if its timestamp is <= t.
inline std::int64_t frame_timestamp(std::size_t j, std::size_t k) {
  return static_cast<std::int64_t>((j + 1) * k) - 1;
}

// Boolean reachability matrix from query positions (always at token
// granularity unless stated otherwise) to key positions at scale key_scale.
struct AttentionMask {
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t key_scale = 1;
  std::vector<std::uint8_t> allowed;  // row-major query_len x key_len

  AttentionMask() = default;
  AttentionMask(std::size_t q, std::size_t k, std::size_t scale)
      : query_len(q), key_len(k), key_scale(scale), allowed(q * k, 0) {}

  bool at(std::size_t t, std::size_t j) const { return allowed[t * key_len + j] != 0; }
  void set(std::size_t t, std::size_t j, bool v) { allowed[t * key_len + j] = v ? 1 : 0; }

  std::size_t count_allowed() const;

  // One line per query row, '#' allowed / '.' masked.
  std::string render() const;
};

// Additive form: 0 where allowed, -inf where masked.
template <typename T>
inline NdArray<T> additive_mask(const AttentionMask& m) {
  NdArray<T> a = NdArray<T>::zeros({m.query_len, m.key_len});
  const T ninf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!m.allowed[i]) a.data[i] = ninf;
  }
  return a;
}

// Non-overlapping half-open distance intervals [lo_i, hi_i), finest first,
// partitioning [0, context_length).
struct WindowBoundaries {
  std::vector<std::pair<std::int64_t, std::int64_t>> spans;

  void validate(std::int64_t context_length) const;
};

AttentionMask causal_mask(std::size_t n);
AttentionMask local_mask(std::size_t n, std::size_t w);

// Mask for an aggregation layer whose keys are frames at scale k > 1:
// allowed[t][j] iff frame_timestamp(j, k) <= t. Early rows may be fully
// masked; attention then yields a zero vector for them.
AttentionMask cross_scale_mask(std::size_t n, std::size_t k);

// One mask per scale (fine -> coarse, matching `scales` and `bounds.spans`):
// allowed[t][j] iff lo_i <= t - timestamp(j) < hi_i and timestamp(j) <= t.
std::vector<AttentionMask> retina_masks(std::size_t n, const std::vector<std::size_t>& scales,
                                        const WindowBoundaries& bounds);

// True iff every allowed (t, j) satisfies frame_timestamp(j, k) <= t.
bool verify_mask_causality(const AttentionMask& mask, std::size_t k);

}  // namespace mslm
