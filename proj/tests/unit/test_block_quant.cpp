// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mxattn/block_quant.hpp"
#include "mxattn/error.hpp"

using namespace mxattn;

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

double rel_l1(const Matrix& ref, const Matrix& test) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += std::fabs(ref.values()[i] - test.values()[i]);
    den += std::fabs(ref.values()[i]);
  }
  return num / den;
}

void expect_same_codes(const DualQuantizedTensor& a, const DualQuantizedTensor& b) {
  EXPECT_EQ(a.packed_low, b.packed_low);
  EXPECT_EQ(a.scales_low, b.scales_low);
  EXPECT_EQ(a.high, b.high);
  EXPECT_EQ(a.scales_high, b.scales_high);
}

}  // namespace

TEST(QuantizeDual, ScaleBoundary) {
  Matrix x(1, 32, 0.5);
  x(0, 7) = -2688.0;
  const auto t = quantize_dual(x, false);
  ASSERT_EQ(t.quant_scale.size(), 1u);
  EXPECT_EQ(t.quant_scale[0], 1.0);
}

TEST(QuantizeDual, ZeroRow) {
  const Matrix x(1, 32, 0.0);
  for (MxFormat low : {MxFormat::NVFP4, MxFormat::MXFP4}) {
    const auto t = quantize_dual(x, false, {low, MxFormat::MXFP8_E4M3, Granularity::PerToken});
    EXPECT_EQ(t.quant_scale[0], 1.0);
    for (std::uint8_t b : t.packed_low.bytes) EXPECT_EQ(b, 0);
    for (std::uint8_t c : t.high) EXPECT_EQ(c, 0);
    for (E8m0Scale s : t.scales_high) EXPECT_EQ(s.exponent(), -127);
    EXPECT_EQ(dequantize_low(t), x);
    EXPECT_EQ(dequantize_high(t), x);
  }
  const auto t = quantize_dual(x, false);
  for (std::uint8_t s : t.scales_low) EXPECT_EQ(decode_fp8(s, ElementKind::E4M3), 1.0);
}

TEST(QuantizeDual, ConstantSixKRecovers) {
  for (double k : {1e-3, 0.37, 1.0, 5.5, 1234.0}) {
    const Matrix x(1, 32, 6.0 * k);
    const auto t = quantize_dual(x, false);
    const Matrix low = dequantize_low(t);
    // Exact up to the rounding of the single S_q division.
    for (double v : low.values()) EXPECT_DOUBLE_EQ(v, 6.0 * k);
  }
}

TEST(QuantizeDual, GridValuesRecoverExactlyAtPowerOfTwoScale) {
  const double grid[8] = {0, 0.5, 1, 1.5, 2, 3, 4, 6};
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x(4, 64);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double scale = std::ldexp(1.0, static_cast<int>(rng() % 40) - 20);
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double g = (c % 16 == rng() % 16) ? 6.0 : grid[rng() % 8];
        x(r, c) = ((rng() & 1) ? -g : g) * scale;
      }
      for (std::size_t b = 0; b < 4; ++b) x(r, b * 16) = 6.0 * scale;  // every NVFP4 block peaks at 6
    }
    const Matrix low = dequantize_low(quantize_dual(x, false));
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_DOUBLE_EQ(low.values()[i], x.values()[i]) << "trial " << trial << " index " << i;
    }
  }
}

TEST(QuantizeDual, DequantizeMatchesFieldComposition) {
  const Matrix x = gaussian(8, 64, 17);
  for (Granularity g : {Granularity::PerTensor, Granularity::PerBlock, Granularity::PerToken}) {
    const auto t = quantize_dual(x, true, {MxFormat::NVFP4, MxFormat::MXFP8_E4M3, g});
    EXPECT_EQ(t.packed_low.bytes.size(), 8u * 32u);
    EXPECT_EQ(t.scales_low.size(), 8u * 4u);
    EXPECT_EQ(t.scales_high.size(), 8u * 2u);
    EXPECT_EQ(t.quant_scale.size(), quant_group_count(8, 64, t.options));
    const Matrix low = dequantize_low(t);
    const Matrix high = dequantize_high(t);
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 64; ++c) {
        const double sq = t.quant_scale[t.group_of(r, c)];
        const double l = decode_e2m1(t.packed_low.at(r * 64 + c)) *
                         decode_fp8(t.scales_low[r * 4 + c / 16], ElementKind::E4M3) * sq;
        const double h = decode_fp8(t.high[r * 64 + c], ElementKind::E4M3) *
                         std::exp2(static_cast<int>(t.scales_high[r * 2 + c / 32].raw()) - 127) * sq;
        EXPECT_EQ(low(r, c), l);
        EXPECT_EQ(high(r, c), h);
      }
    }
  }
}

TEST(QuantizeDual, GroupCounts) {
  const Matrix x = gaussian(5, 96, 1);
  EXPECT_EQ(quantize_dual(x, false, {.granularity = Granularity::PerTensor}).quant_scale.size(), 1u);
  EXPECT_EQ(quantize_dual(x, false, {.granularity = Granularity::PerToken}).quant_scale.size(), 5u);
  EXPECT_EQ(quantize_dual(x, false, {.granularity = Granularity::PerBlock}).quant_scale.size(), 15u);
}

TEST(QuantizeDual, RoundTripErrorBounds) {
  const Matrix x = gaussian(64, 64, 2024);
  const auto t = quantize_dual(x, false);
  EXPECT_LT(rel_l1(x, dequantize_high(t)), 0.05);
  EXPECT_LT(rel_l1(x, dequantize_low(t)), 0.5);
}

TEST(QuantizeDual, ErrorOrderedByFormatFidelity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix x = gaussian(64, 128, seed);
    const auto nv = quantize_dual(x, false, {MxFormat::NVFP4, MxFormat::MXFP8_E4M3, Granularity::PerToken});
    const auto mx = quantize_dual(x, false, {MxFormat::MXFP4, MxFormat::MXFP8_E4M3, Granularity::PerToken});
    const double e_mx4 = rel_l1(x, dequantize_low(mx));
    const double e_nv4 = rel_l1(x, dequantize_low(nv));
    const double e_fp8 = rel_l1(x, dequantize_high(nv));
    EXPECT_GE(e_mx4, e_nv4) << seed;
    EXPECT_GE(e_nv4, e_fp8) << seed;
  }
}

TEST(QuantizeDual, LowPathScaledMagnitudesStayInRange) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = gaussian(4, 64, rng(), std::exp2(static_cast<int>(rng() % 20) - 10));
    for (Granularity g : {Granularity::PerTensor, Granularity::PerBlock, Granularity::PerToken}) {
      std::vector<double> sq;
      const Matrix scaled = scale_for_quantization(x, trial % 2 == 0, {.granularity = g}, sq);
      for (std::size_t r = 0; r < scaled.rows(); ++r) {
        for (std::size_t b = 0; b < 4; ++b) {
          const auto block = scaled.row(r).subspan(b * 16, 16);
          double m = 0.0;
          for (double v : block) m = std::max(m, std::fabs(v));
          ASSERT_LE(m, 2688.0 * (1 + 1e-15));
          const double s = m / 6.0;
          for (double v : block) ASSERT_LE(std::fabs(v) / s, 6.0 * (1 + 1e-15));
        }
      }
    }
  }
}

TEST(QuantizeDual, PowerOfTwoScaleInvariance) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = gaussian(8, 64, rng());
    const int k = static_cast<int>(rng() % 41) - 20;
    Matrix y = x;
    for (double& v : y.values()) v = std::ldexp(v, k);
    for (Granularity g : {Granularity::PerTensor, Granularity::PerToken}) {
      const QuantOptions opts{MxFormat::NVFP4, MxFormat::MXFP8_E4M3, g};
      const auto a = quantize_dual(x, false, opts);
      const auto b = quantize_dual(y, false, opts);
      expect_same_codes(a, b);
      for (std::size_t i = 0; i < a.quant_scale.size(); ++i) {
        ASSERT_EQ(b.quant_scale[i], std::ldexp(a.quant_scale[i], k));
      }
    }
  }
}

TEST(QuantizeDual, PerTokenRowPermutationEquivariance) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = gaussian(16, 64, rng());
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix y(16, 64);
    for (std::size_t r = 0; r < 16; ++r) std::copy_n(x.row(perm[r]).begin(), 64, y.row(r).begin());

    const bool is_query = trial % 2 == 1;
    const auto a = quantize_dual(x, is_query);
    const auto b = quantize_dual(y, is_query);
    const Matrix la = dequantize_low(a), lb = dequantize_low(b);
    const Matrix ha = dequantize_high(a), hb = dequantize_high(b);
    for (std::size_t r = 0; r < 16; ++r) {
      const std::size_t s = perm[r];
      ASSERT_EQ(b.quant_scale[r], a.quant_scale[s]);
      for (std::size_t c = 0; c < 64; ++c) {
        ASSERT_EQ(b.packed_low.at(r * 64 + c), a.packed_low.at(s * 64 + c));
        ASSERT_EQ(b.high[r * 64 + c], a.high[s * 64 + c]);
        ASSERT_EQ(lb(r, c), la(s, c));
        ASSERT_EQ(hb(r, c), ha(s, c));
      }
      for (std::size_t j = 0; j < 4; ++j) ASSERT_EQ(b.scales_low[r * 4 + j], a.scales_low[s * 4 + j]);
      for (std::size_t j = 0; j < 2; ++j) ASSERT_EQ(b.scales_high[r * 2 + j], a.scales_high[s * 2 + j]);
    }
  }
}

TEST(QuantizeDual, QueryPrescaleEquivalence) {
  const Matrix x = gaussian(8, 128, 77);
  Matrix y = x;
  const double f = softmax_prescale_factor(128);
  for (double& v : y.values()) v *= f;
  for (MxFormat low : {MxFormat::NVFP4, MxFormat::MXFP4}) {
    const QuantOptions opts{low, MxFormat::MXFP8_E5M2, Granularity::PerBlock};
    const auto a = quantize_dual(x, true, opts);
    const auto b = quantize_dual(y, false, opts);
    expect_same_codes(a, b);
    EXPECT_EQ(a.quant_scale, b.quant_scale);
    EXPECT_TRUE(a.softmax_prescaled);
    EXPECT_EQ(dequantize_low(a), dequantize_low(b));
  }
  EXPECT_DOUBLE_EQ(f, std::log2(std::exp(1.0)) / std::sqrt(128.0));
}

TEST(QuantizeDual, Errors) {
  EXPECT_THROW(quantize_dual(Matrix(2, 48), false), ShapeError);
  EXPECT_THROW(quantize_dual(Matrix(2, 0), false), ShapeError);
  Matrix bad(1, 32, 1.0);
  bad(0, 3) = std::nan("");
  EXPECT_THROW(quantize_dual(bad, false), InvalidInputError);
  bad(0, 3) = INFINITY;
  EXPECT_THROW(quantize_dual(bad, true), InvalidInputError);
}

TEST(Granularity, ParseRoundTrip) {
  for (Granularity g : {Granularity::PerTensor, Granularity::PerBlock, Granularity::PerToken}) {
    EXPECT_EQ(parse_granularity(to_string(g)), g);
  }
  EXPECT_FALSE(parse_granularity("row").has_value());
}
