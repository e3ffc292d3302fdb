// SPDX-License-Identifier: Apache-2.0
#include "mxattn/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mxattn/error.hpp"

namespace mxattn {

void SimilarityAccumulator::add(std::span<const double> ref, std::span<const double> test) {
  if (ref.size() != test.size()) throw ShapeError("similarity: size mismatch");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double a = ref[i];
    const double b = test[i];
    const double d = a - b;
    dot_ += a * b;
    ref_sq_ += a * a;
    test_sq_ += b * b;
    abs_diff_ += std::fabs(d);
    abs_ref_ += std::fabs(a);
    sq_diff_ += d * d;
    max_ref_ = std::max(max_ref_, std::fabs(a));
  }
  count_ += ref.size();
}

void SimilarityAccumulator::add(const Matrix& ref, const Matrix& test) {
  if (!ref.same_shape(test)) throw ShapeError("similarity: shape mismatch");
  add(ref.values(), test.values());
}

Similarity SimilarityAccumulator::result() const {
  if (count_ == 0 || max_ref_ == 0.0) {
    throw UndefinedMetricError("similarity: reference is empty or all zero");
  }
  Similarity s;
  const double denom = std::sqrt(ref_sq_) * std::sqrt(test_sq_);
  s.cos_sim = denom > 0.0 ? std::clamp(dot_ / denom, -1.0, 1.0) : 0.0;
  s.rel_l1 = abs_diff_ / abs_ref_;
  s.abs_l1 = abs_diff_ / static_cast<double>(count_);
  s.rmse = std::sqrt(sq_diff_ / static_cast<double>(count_));
  s.psnr = s.rmse == 0.0 ? std::numeric_limits<double>::infinity()
                         : 20.0 * std::log10(max_ref_) - 20.0 * std::log10(s.rmse);
  return s;
}

Similarity similarity(const Matrix& ref, const Matrix& test) {
  SimilarityAccumulator acc;
  acc.add(ref, test);
  return acc.result();
}

std::vector<double> per_channel_error(const Matrix& ref, const Matrix& test) {
  if (!ref.same_shape(test)) throw ShapeError("per_channel_error: shape mismatch");
  std::vector<double> err(ref.cols(), 0.0);
  for (std::size_t r = 0; r < ref.rows(); ++r) {
    for (std::size_t c = 0; c < ref.cols(); ++c) err[c] += std::fabs(ref(r, c) - test(r, c));
  }
  if (ref.rows() > 0) {
    for (double& e : err) e /= static_cast<double>(ref.rows());
  }
  return err;
}

double bit_high_fraction(std::size_t len_q, std::size_t len_k, const AttentionConfig& cfg) {
  cfg.validate();
  if (len_q == 0 || len_k == 0) return 0.0;
  const std::size_t query_tiles = (len_q + cfg.tile_m - 1) / cfg.tile_m;
  double high = 0.0;
  double total = 0.0;
  for (std::size_t n_q = 0; n_q < query_tiles; ++n_q) {
    const std::size_t q0 = n_q * cfg.tile_m;
    const std::size_t q1 = std::min(q0 + cfg.tile_m, len_q);
    for (const TileVisit& v : plan_query_tile(n_q, len_q, len_k, cfg)) {
      const std::size_t k0 = v.key_tile * cfg.tile_n;
      const std::size_t k1 = std::min(k0 + cfg.tile_n, len_k);
      double cells = 0.0;
      if (cfg.causal) {
        // Count pairs (q, k) in the tile with k <= q.
        for (std::size_t q = q0; q < q1; ++q) {
          if (q >= k0) cells += static_cast<double>(std::min(q + 1, k1) - k0);
        }
      } else {
        cells = static_cast<double>((q1 - q0) * (k1 - k0));
      }
      total += cells;
      if (v.precision == TilePrecision::High) high += cells;
    }
  }
  return total > 0.0 ? high / total : 0.0;
}

double bit_high_fraction(std::size_t len_q, std::size_t len_k, std::size_t tile_m,
                         std::size_t tile_n, std::size_t diag, std::size_t sink, bool causal) {
  AttentionConfig cfg;
  cfg.tile_m = tile_m;
  cfg.tile_n = tile_n;
  cfg.diag = diag;
  cfg.sink = sink;
  cfg.causal = causal;
  return bit_high_fraction(len_q, len_k, cfg);
}

}  // namespace mxattn
