// SPDX-License-Identifier: Apache-2.0
//
// MXT1 tensor files, all fields little-endian:
//   bytes 0..3   magic "MXT1"
//   u32          dtype (0 = f32)
//   u32          ndim
//   u32 x ndim   dims, outermost first
//   f32 x prod(dims)  row-major payload
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mxattn {

inline constexpr std::uint32_t kTensorDtypeF32 = 0;

struct TensorFile {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const noexcept;
};

/// Throws FileFormatError naming the path and the offending field.
TensorFile read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const std::filesystem::path& path, const TensorFile& tensor);

}  // namespace mxattn
