// SPDX-License-Identifier: Apache-2.0
//
// Dual-precision block quantization: one pass over a B x D tensor produces
//   - a low-bit copy (packed E2M1 elements with per-16 E4M3 scales for NVFP4,
//     or per-32 E8M0 scales for MXFP4), and
//   - a high-bit copy (FP8 elements with per-32 E8M0 scales),
// both on top of a quantization scale S_q that maps each group's absolute
// maximum onto 448 * 6, the largest magnitude NVFP4 can express.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "mxattn/codec.hpp"
#include "mxattn/matrix.hpp"

namespace mxattn {

enum class Granularity : std::uint8_t { PerTensor, PerBlock, PerToken };

std::string_view to_string(Granularity g) noexcept;
/// Accepts "tensor", "block", "token".
std::optional<Granularity> parse_granularity(std::string_view text) noexcept;

/// 448 (E4M3 scale max) * 6 (E2M1 element max).
inline constexpr double kNvfp4Range = 448.0 * 6.0;
/// Head-dimension blocking every quantized tensor must respect (the MXFP8 block).
inline constexpr std::size_t kMxBlock = 32;

struct QuantOptions {
  MxFormat low_format = MxFormat::NVFP4;        // NVFP4 or MXFP4
  MxFormat high_format = MxFormat::MXFP8_E4M3;  // MXFP8_E4M3 or MXFP8_E5M2
  /// PerToken: one S_q per row. PerBlock: one per (row, 32-column block).
  /// PerTensor: a single S_q.
  Granularity granularity = Granularity::PerToken;
};

struct DualQuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  QuantOptions options;
  bool softmax_prescaled = false;

  PackedFp4Buffer packed_low;              // rows * cols codes, row-major
  std::vector<std::uint8_t> scales_low;    // rows * cols/V1: E4M3 codes (NVFP4) or E8M0 raw (MXFP4)
  std::vector<std::uint8_t> high;          // rows * cols FP8 codes
  std::vector<E8m0Scale> scales_high;      // rows * cols/32
  std::vector<double> quant_scale;         // one S_q per granularity group

  std::size_t low_block() const noexcept;
  std::size_t low_scales_per_row() const noexcept { return cols / low_block(); }
  std::size_t high_scales_per_row() const noexcept { return cols / kMxBlock; }
  /// S_q group of element (r, c).
  std::size_t group_of(std::size_t r, std::size_t c) const noexcept;
};

/// log2(e) / sqrt(D): folds the softmax temperature and the base change into Q.
double softmax_prescale_factor(std::size_t head_dim) noexcept;

/// Number of S_q groups for a rows x cols tensor.
std::size_t quant_group_count(std::size_t rows, std::size_t cols, const QuantOptions& opts) noexcept;
std::size_t quant_group_of(std::size_t r, std::size_t c, std::size_t cols,
                           const QuantOptions& opts) noexcept;

/// Steps 1-2 only: the softmax pre-scale (queries) and the division by S_q.
/// Returns X_scaled and fills `quant_scale` with one entry per group.
Matrix scale_for_quantization(const Matrix& x, bool is_query, const QuantOptions& opts,
                              std::vector<double>& quant_scale);

/// Full pipeline. Throws ShapeError when D is not a multiple of 32 and
/// InvalidInputError on non-finite input.
DualQuantizedTensor quantize_dual(const Matrix& x, bool is_query, const QuantOptions& opts = {});

Matrix dequantize_low(const DualQuantizedTensor& t);
Matrix dequantize_high(const DualQuantizedTensor& t);

}  // namespace mxattn
