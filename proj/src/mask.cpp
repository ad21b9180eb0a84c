#include "mslm/mask.hpp"

#include <stdexcept>

namespace mslm {

std::size_t AttentionMask::count_allowed() const {
  std::size_t n = 0;
  for (auto v : allowed) n += v != 0;
  return n;
}

std::string AttentionMask::render() const {
  std::string out;
  out.reserve(query_len * (key_len + 1));
  for (std::size_t t = 0; t < query_len; ++t) {
    for (std::size_t j = 0; j < key_len; ++j) out += at(t, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

void WindowBoundaries::validate(std::int64_t context_length) const {
  if (spans.empty()) throw std::invalid_argument("retina windows: no spans");
  if (spans.front().first != 0) {
    throw std::invalid_argument("retina windows: first span must start at 0");
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].second <= spans[i].first) {
      throw std::invalid_argument("retina windows: span " + std::to_string(i) + " is empty");
    }
    if (i + 1 < spans.size() && spans[i + 1].first != spans[i].second) {
      throw std::invalid_argument(
          "retina windows: spans must be contiguous and non-overlapping, got gap/overlap between " +
          std::to_string(spans[i].second) + " and " + std::to_string(spans[i + 1].first));
    }
  }
  if (spans.back().second != context_length) {
    throw std::invalid_argument("retina windows: spans must cover [0, " +
                                std::to_string(context_length) + "), last span ends at " +
                                std::to_string(spans.back().second));
  }
}

AttentionMask causal_mask(std::size_t n) {
  AttentionMask m(n, n, 1);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j <= t; ++j) m.set(t, j, true);
  return m;
}

AttentionMask local_mask(std::size_t n, std::size_t w) {
  if (w < 1) throw std::invalid_argument("local_mask: window must be >= 1");
  AttentionMask m(n, n, 1);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t + 1 >= w ? t + 1 - w : 0;
    for (std::size_t j = lo; j <= t; ++j) m.set(t, j, true);
  }
  return m;
}

AttentionMask cross_scale_mask(std::size_t n, std::size_t k) {
  if (k <= 1) throw std::invalid_argument("cross_scale_mask: scale must be > 1");
  if (n % k != 0) {
    throw std::invalid_argument("cross_scale_mask: length " + std::to_string(n) +
                                " not divisible by scale " + std::to_string(k));
  }
  AttentionMask m(n, n / k, k);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < n / k; ++j)
      if (frame_timestamp(j, k) <= static_cast<std::int64_t>(t)) m.set(t, j, true);
  return m;
}

std::vector<AttentionMask> retina_masks(std::size_t n, const std::vector<std::size_t>& scales,
                                        const WindowBoundaries& bounds) {
  if (scales.size() != bounds.spans.size()) {
    throw std::invalid_argument("retina_masks: " + std::to_string(scales.size()) + " scales vs " +
                                std::to_string(bounds.spans.size()) + " windows");
  }
  bounds.validate(static_cast<std::int64_t>(n));
  std::vector<AttentionMask> out;
  out.reserve(scales.size());
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::size_t k = scales[i];
    if (n % k != 0) {
      throw std::invalid_argument("retina_masks: length " + std::to_string(n) +
                                  " not divisible by scale " + std::to_string(k));
    }
    const auto [lo, hi] = bounds.spans[i];
    AttentionMask m(n, n / k, k);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < n / k; ++j) {
        const std::int64_t ts = frame_timestamp(j, k);
        if (ts > static_cast<std::int64_t>(t)) continue;
        const std::int64_t dist = static_cast<std::int64_t>(t) - ts;
        if (dist >= lo && dist < hi) m.set(t, j, true);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

bool verify_mask_causality(const AttentionMask& mask, std::size_t k) {
  for (std::size_t t = 0; t < mask.query_len; ++t)
    for (std::size_t j = 0; j < mask.key_len; ++j)
      if (mask.at(t, j) && frame_timestamp(j, k) > static_cast<std::int64_t>(t)) return false;
  return true;
}

}  // namespace mslm
