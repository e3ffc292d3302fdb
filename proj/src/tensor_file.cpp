// SPDX-License-Identifier: Apache-2.0
#include "mxattn/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mxattn/error.hpp"

namespace mxattn {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'X', 'T', '1'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw FileFormatError(path.string() + ": " + what);
}

}  // namespace

std::size_t TensorFile::element_count() const noexcept {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());

  if (bytes.size() < 12) fail(path, "header truncated");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) fail(path, "bad magic (expected MXT1)");
  const std::uint32_t dtype = get_u32(bytes.data() + 4);
  if (dtype != kTensorDtypeF32) fail(path, "unsupported dtype " + std::to_string(dtype));
  const std::uint32_t ndim = get_u32(bytes.data() + 8);
  if (ndim == 0 || ndim > 8) fail(path, "invalid ndim " + std::to_string(ndim));
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(ndim);
  if (bytes.size() < header) fail(path, "dims truncated");

  TensorFile t;
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(bytes.data() + 12 + 4 * i));
  const std::size_t n = t.element_count();
  if (bytes.size() != header + 4 * n) {
    fail(path, "payload is " + std::to_string(bytes.size() - header) + " bytes, dims require " +
                   std::to_string(4 * n));
  }
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
  }
  return t;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& tensor) {
  if (tensor.data.size() != tensor.element_count()) {
    throw ShapeError("write_tensor_file: data size does not match dims");
  }
  std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
  put_u32(out, kTensorDtypeF32);
  put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (std::uint32_t d : tensor.dims) put_u32(out, d);
  for (float f : tensor.data) put_u32(out, std::bit_cast<std::uint32_t>(f));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(path, "cannot open file for writing");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) fail(path, "write failed");
}

}  // namespace mxattn
