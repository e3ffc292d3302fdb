// SPDX-License-Identifier: Apache-2.0
#include "mxattn/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mxattn/error.hpp"

namespace mxattn {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw InvalidInputError(std::string(what) + ": non-finite input");
  }
}

// Round-half-to-even independent of the floating-point environment.
double round_half_even(double q) {
  const double fl = std::floor(q);
  const double diff = q - fl;
  if (diff > 0.5) return fl + 1.0;
  if (diff < 0.5) return fl;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

}  // namespace

std::string_view to_string(MxFormat fmt) noexcept {
  switch (fmt) {
    case MxFormat::MXFP8_E4M3: return "mxfp8-e4m3";
    case MxFormat::MXFP8_E5M2: return "mxfp8-e5m2";
    case MxFormat::MXFP4: return "mxfp4";
    case MxFormat::NVFP4: return "nvfp4";
  }
  return "?";
}

std::string_view to_string(ElementKind kind) noexcept {
  switch (kind) {
    case ElementKind::E2M1: return "e2m1";
    case ElementKind::E4M3: return "e4m3";
    case ElementKind::E5M2: return "e5m2";
  }
  return "?";
}

std::optional<MxFormat> parse_format(std::string_view text) noexcept {
  if (text == "mxfp8" || text == "mxfp8-e4m3" || text == "e4m3") return MxFormat::MXFP8_E4M3;
  if (text == "mxfp8-e5m2" || text == "e5m2") return MxFormat::MXFP8_E5M2;
  if (text == "mxfp4") return MxFormat::MXFP4;
  if (text == "nvfp4") return MxFormat::NVFP4;
  return std::nullopt;
}

double E8m0Scale::value() const noexcept { return std::ldexp(1.0, exponent()); }

int floor_log2(double x) noexcept {
  int e = 0;
  std::frexp(x, &e);  // x = f * 2^e, f in [0.5, 1)
  return e - 1;
}

Fp4Code encode_e2m1(double x) {
  require_finite(x, "encode_e2m1");
  const unsigned sign = std::signbit(x) && x != 0.0 ? 1u : 0u;
  const double a = std::fabs(x);
  if (a > 6.0) throw OutOfRangeError("encode_e2m1: |x| > 6");

  // Exponent from the {1, 2, 4} thresholds.
  unsigned e = (a >= 1.0 ? 1u : 0u) + (a >= 2.0 ? 1u : 0u) + (a >= 4.0 ? 1u : 0u);
  // Subnormals (e == 0) sit on a 0.5 grid in [0, 1); normals are normalised into [1, 2).
  const double norm = e == 0 ? a : a / std::ldexp(1.0, static_cast<int>(e) - 1);
  const double mid = e == 0 ? 0.25 : 1.25;
  // Strictly-greater comparison sends midpoints to the even (M = 0) code.
  unsigned m = norm > mid ? 1u : 0u;

  // Past the upper midpoint of the binade the nearest value is the next power
  // of two. The tie at exactly that midpoint also goes up, since the carry has M = 0.
  const double carry = e == 0 ? 0.75 : 1.75;
  if (e < 3 && norm >= carry) {
    ++e;
    m = 0;
  }
  return Fp4Code::from_fields(sign, e, m);
}

double decode_e2m1(Fp4Code code) noexcept {
  static constexpr double kMagnitude[8] = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  const double v = kMagnitude[code.raw() & 0x7];
  return code.sign() ? -v : v;
}

std::uint8_t encode_fp8(double x, ElementKind kind) {
  if (kind == ElementKind::E2M1) throw InvalidInputError("encode_fp8: E2M1 is not an FP8 layout");
  require_finite(x, "encode_fp8");
  const ElementFormat f = element_format(kind);
  const double a = std::fabs(x);
  if (a > f.upper) throw OutOfRangeError("encode_fp8: magnitude exceeds format maximum");
  const unsigned sign = std::signbit(x) && x != 0.0 ? 1u : 0u;
  const unsigned sign_bit = sign << 7;
  if (a == 0.0) return 0;

  const int min_normal_exp = 1 - f.bias;
  const int exp = std::max(floor_log2(a), min_normal_exp);
  const double quantum = std::ldexp(1.0, exp - f.mantissa_bits);
  const auto n = static_cast<unsigned>(round_half_even(a / quantum));
  const unsigned implicit = 1u << f.mantissa_bits;

  unsigned exp_field = 0;
  unsigned mant = 0;
  if (n < implicit) {
    // Only reachable at the minimum exponent: subnormal.
    exp_field = 0;
    mant = n;
  } else if (n >= 2 * implicit) {
    exp_field = static_cast<unsigned>(exp + 1 + f.bias);
    mant = 0;
  } else {
    exp_field = static_cast<unsigned>(exp + f.bias);
    mant = n - implicit;
  }
  return static_cast<std::uint8_t>(sign_bit | (exp_field << f.mantissa_bits) | mant);
}

double decode_fp8(std::uint8_t code, ElementKind kind) noexcept {
  const ElementFormat f = element_format(kind);
  const bool neg = (code >> 7) & 1u;
  const unsigned mant_mask = (1u << f.mantissa_bits) - 1u;
  const unsigned exp_mask = (1u << f.exponent_bits) - 1u;
  const unsigned mant = code & mant_mask;
  const unsigned exp_field = (code >> f.mantissa_bits) & exp_mask;

  if (kind == ElementKind::E4M3 && exp_field == exp_mask && mant == mant_mask) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (kind == ElementKind::E5M2 && exp_field == exp_mask) {
    if (mant != 0) return std::numeric_limits<double>::quiet_NaN();
    return neg ? -std::numeric_limits<double>::infinity()
               : std::numeric_limits<double>::infinity();
  }

  double v = 0.0;
  if (exp_field == 0) {
    v = std::ldexp(static_cast<double>(mant), 1 - f.bias - f.mantissa_bits);
  } else {
    v = std::ldexp(static_cast<double>(mant + (1u << f.mantissa_bits)),
                   static_cast<int>(exp_field) - f.bias - f.mantissa_bits);
  }
  return neg ? -v : v;
}

PackedFp4Buffer pack_fp4(std::span<const Fp4Code> codes) {
  PackedFp4Buffer buf;
  buf.logical_len = codes.size();
  buf.bytes.resize((codes.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < codes.size(); i += 2) {
    const std::uint8_t lo = codes[i].raw();
    const std::uint8_t hi = i + 1 < codes.size() ? codes[i + 1].raw() : 0;
    buf.bytes[i / 2] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return buf;
}

std::vector<Fp4Code> unpack_fp4(const PackedFp4Buffer& buf) {
  std::vector<Fp4Code> out;
  out.reserve(buf.logical_len);
  for (std::size_t i = 0; i < buf.logical_len; ++i) out.push_back(buf.at(i));
  return out;
}

E8m0Scale e8m0_from_exponent(int e) noexcept {
  return E8m0Scale(static_cast<std::uint8_t>(std::clamp<long long>(static_cast<long long>(e) + 127, 0, 254)));
}

}  // namespace mxattn
