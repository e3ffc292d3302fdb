// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mxattn/attention.hpp"
#include "mxattn/matrix.hpp"

namespace mxattn {

/// Error metrics of a test tensor against a reference.
/// psnr is +inf when the tensors are identical.
struct Similarity {
  double cos_sim = 0.0;
  double rel_l1 = 0.0;  // sum|ref - test| / sum|ref|
  double abs_l1 = 0.0;  // mean|ref - test|
  double rmse = 0.0;
  double psnr = 0.0;  // 20 log10(max|ref|) - 20 log10(rmse), dB
};

/// Streaming form of similarity() so large score matrices never need to be
/// materialized at once. Feed chunks in any split; the result only depends
/// on the order of the elements.
class SimilarityAccumulator {
 public:
  void add(std::span<const double> ref, std::span<const double> test);
  void add(const Matrix& ref, const Matrix& test);
  std::size_t count() const noexcept { return count_; }
  /// Throws UndefinedMetricError if nothing was added or the reference is all zero.
  Similarity result() const;

 private:
  double dot_ = 0.0;
  double ref_sq_ = 0.0;
  double test_sq_ = 0.0;
  double abs_diff_ = 0.0;
  double abs_ref_ = 0.0;
  double sq_diff_ = 0.0;
  double max_ref_ = 0.0;
  std::size_t count_ = 0;
};

/// Throws ShapeError on shape mismatch and UndefinedMetricError for an all-zero reference.
Similarity similarity(const Matrix& ref, const Matrix& test);

/// Mean absolute error of each column (per-channel error profile).
std::vector<double> per_channel_error(const Matrix& ref, const Matrix& test);

/// Fraction in [0, 1] of attention-matrix entries (causal region only when
/// causal) whose score is computed in high precision by the tile plan.
double bit_high_fraction(std::size_t len_q, std::size_t len_k, std::size_t tile_m,
                         std::size_t tile_n, std::size_t diag, std::size_t sink, bool causal);
double bit_high_fraction(std::size_t len_q, std::size_t len_k, const AttentionConfig& cfg);

}  // namespace mxattn
