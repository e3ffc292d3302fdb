// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact codecs for the microscaling element formats (E2M1, E4M3, E5M2)
// and their shared-scale formats (E8M0, E4M3).
//
// FP8 layouts follow the OCP 8-bit floating point conventions:
//   E4M3: bias 7, no infinities, S.1111.111 is the only NaN, max 448.
//   E5M2: bias 15, IEEE-like, exponent 11111 encodes Inf/NaN, max 57344.
// E2M1 has no Inf/NaN encodings at all; max magnitude is 6.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace mxattn {

enum class ElementKind : std::uint8_t { E2M1, E4M3, E5M2 };

struct ElementFormat {
  ElementKind kind;
  int bits;
  int exponent_bits;
  int mantissa_bits;
  int bias;
  int e_max;     // unbiased exponent of the largest normal number
  double upper;  // largest finite magnitude; the lower bound is -upper

  constexpr double lower() const noexcept { return -upper; }
};

constexpr ElementFormat element_format(ElementKind kind) noexcept {
  switch (kind) {
    case ElementKind::E2M1: return {ElementKind::E2M1, 4, 2, 1, 1, 2, 6.0};
    case ElementKind::E4M3: return {ElementKind::E4M3, 8, 4, 3, 7, 8, 448.0};
    case ElementKind::E5M2: return {ElementKind::E5M2, 8, 5, 2, 15, 15, 57344.0};
  }
  return {ElementKind::E2M1, 4, 2, 1, 1, 2, 6.0};
}

enum class ScaleFormat : std::uint8_t { E8M0, E4M3 };

enum class MxFormat : std::uint8_t { MXFP8_E4M3, MXFP8_E5M2, MXFP4, NVFP4 };

/// Static description of one block-scaled format.
struct MxFormatSpec {
  MxFormat name;
  ElementFormat element;
  ScaleFormat scale_format;
  int block_size;  // elements sharing one scale
};

constexpr MxFormatSpec format_spec(MxFormat fmt) noexcept {
  switch (fmt) {
    case MxFormat::MXFP8_E4M3:
      return {fmt, element_format(ElementKind::E4M3), ScaleFormat::E8M0, 32};
    case MxFormat::MXFP8_E5M2:
      return {fmt, element_format(ElementKind::E5M2), ScaleFormat::E8M0, 32};
    case MxFormat::MXFP4:
      return {fmt, element_format(ElementKind::E2M1), ScaleFormat::E8M0, 32};
    case MxFormat::NVFP4:
      return {fmt, element_format(ElementKind::E2M1), ScaleFormat::E4M3, 16};
  }
  return {fmt, element_format(ElementKind::E2M1), ScaleFormat::E8M0, 32};
}

std::string_view to_string(MxFormat fmt) noexcept;
std::string_view to_string(ElementKind kind) noexcept;
/// Accepts "mxfp8" (alias of mxfp8-e4m3), "mxfp8-e4m3", "mxfp8-e5m2", "mxfp4", "nvfp4".
std::optional<MxFormat> parse_format(std::string_view text) noexcept;

/// One E2M1 value: bit 3 sign, bits 2..1 exponent, bit 0 mantissa.
class Fp4Code {
 public:
  constexpr Fp4Code() = default;
  /// Only the low nibble of `raw` is kept.
  constexpr explicit Fp4Code(std::uint8_t raw) : raw_(raw & 0x0F) {}
  constexpr static Fp4Code from_fields(unsigned sign, unsigned exponent, unsigned mantissa) {
    return Fp4Code(static_cast<std::uint8_t>(((sign & 1u) << 3) | ((exponent & 3u) << 1) |
                                             (mantissa & 1u)));
  }

  constexpr std::uint8_t raw() const noexcept { return raw_; }
  constexpr unsigned sign() const noexcept { return (raw_ >> 3) & 1u; }
  constexpr unsigned exponent() const noexcept { return (raw_ >> 1) & 3u; }
  constexpr unsigned mantissa() const noexcept { return raw_ & 1u; }

  friend constexpr bool operator==(Fp4Code, Fp4Code) = default;

 private:
  std::uint8_t raw_ = 0;
};

/// Two E2M1 codes per byte: even index in the low nibble, odd index in the high nibble.
struct PackedFp4Buffer {
  std::vector<std::uint8_t> bytes;
  std::size_t logical_len = 0;

  Fp4Code at(std::size_t i) const noexcept {
    const std::uint8_t b = bytes[i / 2];
    return Fp4Code(static_cast<std::uint8_t>((i % 2 == 0) ? (b & 0x0F) : (b >> 4)));
  }

  friend bool operator==(const PackedFp4Buffer&, const PackedFp4Buffer&) = default;
};

/// Power-of-two scale, value 2^(raw - 127). raw 255 (NaN) is never produced.
class E8m0Scale {
 public:
  constexpr E8m0Scale() = default;
  constexpr explicit E8m0Scale(std::uint8_t raw) : raw_(raw) {}
  constexpr std::uint8_t raw() const noexcept { return raw_; }
  constexpr int exponent() const noexcept { return static_cast<int>(raw_) - 127; }
  double value() const noexcept;

  friend constexpr bool operator==(E8m0Scale, E8m0Scale) = default;

 private:
  std::uint8_t raw_ = 127;
};

/// Nearest E2M1 value, ties to even mantissa. Throws InvalidInputError for
/// NaN/Inf and OutOfRangeError for |x| > 6.
Fp4Code encode_e2m1(double x);
double decode_e2m1(Fp4Code code) noexcept;

/// Round-to-nearest-even FP8 encoding. `kind` must be E4M3 or E5M2.
/// Throws InvalidInputError for NaN/Inf and OutOfRangeError when |x|
/// exceeds the format maximum.
std::uint8_t encode_fp8(double x, ElementKind kind);
/// Decodes any of the 256 codes; NaN patterns give NaN, E5M2 Inf patterns give Inf.
double decode_fp8(std::uint8_t code, ElementKind kind) noexcept;

PackedFp4Buffer pack_fp4(std::span<const Fp4Code> codes);
std::vector<Fp4Code> unpack_fp4(const PackedFp4Buffer& buf);

/// raw = clamp(e + 127, 0, 254).
E8m0Scale e8m0_from_exponent(int e) noexcept;

/// floor(log2(x)) for finite x > 0, computed exactly from the binary exponent.
int floor_log2(double x) noexcept;

}  // namespace mxattn
