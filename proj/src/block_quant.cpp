// SPDX-License-Identifier: Apache-2.0
#include "mxattn/block_quant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mxattn/error.hpp"

namespace mxattn {

namespace {

constexpr int kMinSharedExponent = -127;
constexpr int kMaxSharedExponent = 127;
// Smallest positive E4M3 value (subnormal 2^-9).
const double kMinE4m3Scale = std::ldexp(1.0, -9);

double abs_max(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// Shared power-of-two exponent aligning the block maximum with e_max of the
// element format. Zero blocks map to the smallest E8M0 exponent.
int shared_exponent(double block_max, int e_max) {
  if (block_max == 0.0) return kMinSharedExponent;
  return std::clamp(floor_log2(block_max) - e_max, kMinSharedExponent, kMaxSharedExponent);
}

void validate(const Matrix& x, const QuantOptions& opts) {
  if (x.cols() == 0 || x.cols() % kMxBlock != 0) {
    throw ShapeError("quantize_dual: head dimension " + std::to_string(x.cols()) +
                     " is not a positive multiple of 32");
  }
  if (opts.low_format != MxFormat::NVFP4 && opts.low_format != MxFormat::MXFP4) {
    throw ConfigError("quantize_dual: low format must be nvfp4 or mxfp4");
  }
  if (opts.high_format != MxFormat::MXFP8_E4M3 && opts.high_format != MxFormat::MXFP8_E5M2) {
    throw ConfigError("quantize_dual: high format must be an MXFP8 variant");
  }
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw InvalidInputError("quantize_dual: non-finite input");
  }
}

}  // namespace

std::string_view to_string(Granularity g) noexcept {
  switch (g) {
    case Granularity::PerTensor: return "tensor";
    case Granularity::PerBlock: return "block";
    case Granularity::PerToken: return "token";
  }
  return "?";
}

std::optional<Granularity> parse_granularity(std::string_view text) noexcept {
  if (text == "tensor") return Granularity::PerTensor;
  if (text == "block") return Granularity::PerBlock;
  if (text == "token") return Granularity::PerToken;
  return std::nullopt;
}

double softmax_prescale_factor(std::size_t head_dim) noexcept {
  return std::numbers::log2e / std::sqrt(static_cast<double>(head_dim));
}

std::size_t quant_group_count(std::size_t rows, std::size_t cols, const QuantOptions& opts) noexcept {
  switch (opts.granularity) {
    case Granularity::PerTensor: return 1;
    case Granularity::PerBlock: return rows * (cols / kMxBlock);
    case Granularity::PerToken: return rows;
  }
  return rows;
}

std::size_t quant_group_of(std::size_t r, std::size_t c, std::size_t cols,
                           const QuantOptions& opts) noexcept {
  switch (opts.granularity) {
    case Granularity::PerTensor: return 0;
    case Granularity::PerBlock: return r * (cols / kMxBlock) + c / kMxBlock;
    case Granularity::PerToken: return r;
  }
  return r;
}

std::size_t DualQuantizedTensor::low_block() const noexcept {
  return static_cast<std::size_t>(format_spec(options.low_format).block_size);
}

std::size_t DualQuantizedTensor::group_of(std::size_t r, std::size_t c) const noexcept {
  return quant_group_of(r, c, cols, options);
}

Matrix scale_for_quantization(const Matrix& x, bool is_query, const QuantOptions& opts,
                              std::vector<double>& quant_scale) {
  validate(x, opts);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();

  // Step 1: fold the softmax scale into queries.
  Matrix out = x;
  if (is_query) {
    const double f = softmax_prescale_factor(cols);
    for (double& v : out.values()) v *= f;
  }

  // Step 2: S_q = group max / (448 * 6).
  std::vector<double> group_max(quant_group_count(rows, cols, opts), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double& m = group_max[quant_group_of(r, c, cols, opts)];
      m = std::max(m, std::fabs(out(r, c)));
    }
  }
  quant_scale.assign(group_max.size(), 1.0);
  for (std::size_t g = 0; g < group_max.size(); ++g) {
    if (group_max[g] > 0.0) quant_scale[g] = group_max[g] / kNvfp4Range;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) /= quant_scale[quant_group_of(r, c, cols, opts)];
    }
  }
  return out;
}

DualQuantizedTensor quantize_dual(const Matrix& x, bool is_query, const QuantOptions& opts) {
  DualQuantizedTensor t;
  const Matrix scaled = scale_for_quantization(x, is_query, opts, t.quant_scale);
  t.rows = x.rows();
  t.cols = x.cols();
  t.options = opts;
  t.softmax_prescaled = is_query;

  const std::size_t rows = t.rows;
  const std::size_t cols = t.cols;
  const std::size_t v1 = t.low_block();
  const ElementFormat high_elem = format_spec(opts.high_format).element;

  // MXFP4 skips the two-level scaling and quantizes the pre-scaled input directly.
  Matrix mxfp4_source;
  if (opts.low_format == MxFormat::MXFP4) {
    mxfp4_source = x;
    if (is_query) {
      const double f = softmax_prescale_factor(cols);
      for (double& v : mxfp4_source.values()) v *= f;
    }
  }

  std::vector<Fp4Code> codes(rows * cols);
  t.scales_low.resize(rows * (cols / v1));
  t.high.resize(rows * cols);
  t.scales_high.resize(rows * (cols / kMxBlock));

  for (std::size_t r = 0; r < rows; ++r) {
    const std::span<const double> row = scaled.row(r);

    // Steps 3-4: low-precision shared scale and E2M1 encoding.
    for (std::size_t b = 0; b < cols / v1; ++b) {
      double applied = 1.0;
      std::span<const double> block;
      if (opts.low_format == MxFormat::NVFP4) {
        block = row.subspan(b * v1, v1);
        const double bmax = abs_max(block);
        double s = bmax > 0.0 ? bmax / 6.0 : 1.0;
        s = std::clamp(s, kMinE4m3Scale, 448.0);
        const std::uint8_t code = encode_fp8(s, ElementKind::E4M3);
        t.scales_low[r * (cols / v1) + b] = code;
        applied = decode_fp8(code, ElementKind::E4M3);
      } else {
        block = mxfp4_source.row(r).subspan(b * v1, v1);
        const int e = shared_exponent(abs_max(block), element_format(ElementKind::E2M1).e_max);
        const E8m0Scale s = e8m0_from_exponent(e);
        t.scales_low[r * (cols / v1) + b] = s.raw();
        applied = s.value();
      }
      for (std::size_t i = 0; i < v1; ++i) {
        const double clamped = std::clamp(block[i] / applied, -6.0, 6.0);
        codes[r * cols + b * v1 + i] = encode_e2m1(clamped);
      }
    }

    // Steps 6-7: high-precision shared exponent, FP8 encoding, E8M0 scale.
    for (std::size_t b = 0; b < cols / kMxBlock; ++b) {
      const std::span<const double> block = row.subspan(b * kMxBlock, kMxBlock);
      const int e = shared_exponent(abs_max(block), high_elem.e_max);
      const E8m0Scale s = e8m0_from_exponent(e);
      t.scales_high[r * (cols / kMxBlock) + b] = s;
      const double applied = s.value();
      for (std::size_t i = 0; i < kMxBlock; ++i) {
        const double clamped = std::clamp(block[i] / applied, high_elem.lower(), high_elem.upper);
        t.high[r * cols + b * kMxBlock + i] = encode_fp8(clamped, high_elem.kind);
      }
    }
  }

  // Step 5: two codes per byte along D.
  t.packed_low = pack_fp4(codes);
  return t;
}

Matrix dequantize_low(const DualQuantizedTensor& t) {
  Matrix out(t.rows, t.cols);
  const std::size_t v1 = t.low_block();
  const bool nv = t.options.low_format == MxFormat::NVFP4;
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      const std::uint8_t sc = t.scales_low[r * (t.cols / v1) + c / v1];
      const double elem = decode_e2m1(t.packed_low.at(r * t.cols + c));
      out(r, c) = nv ? elem * decode_fp8(sc, ElementKind::E4M3) * t.quant_scale[t.group_of(r, c)]
                     : elem * E8m0Scale(sc).value();
    }
  }
  return out;
}

Matrix dequantize_high(const DualQuantizedTensor& t) {
  Matrix out(t.rows, t.cols);
  const ElementKind kind = format_spec(t.options.high_format).element.kind;
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      const E8m0Scale s = t.scales_high[r * (t.cols / kMxBlock) + c / kMxBlock];
      out(r, c) = decode_fp8(t.high[r * t.cols + c], kind) * s.value() *
                  t.quant_scale[t.group_of(r, c)];
    }
  }
  return out;
}

}  // namespace mxattn
