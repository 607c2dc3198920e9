#pragma once

// Little-endian byte stream helpers shared by the map and weight containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pram/error.h"

namespace pram::detail {

static_assert(std::endian::native == std::endian::little,
              "containers are written in host order; big-endian hosts need "
              "byte swapping");

std::uint32_t Crc32(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void Raw(const void* data, size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  void U64(std::uint64_t v) { Raw(&v, sizeof v); }
  void F32(float v) { Raw(&v, sizeof v); }
  void F64(double v) { Raw(&v, sizeof v); }
  void Chars(std::string_view s) { Raw(s.data(), s.size()); }
  void PatchU64(size_t offset, std::uint64_t v) {
    std::memcpy(bytes_.data() + offset, &v, sizeof v);
  }

  size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader; running past the end throws `overrun_code`.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, ErrorCode overrun_code)
      : bytes_(bytes), overrun_code_(overrun_code) {}

  void Raw(void* out, size_t size) {
    Require(size);
    std::memcpy(out, bytes_.data() + pos_, size);
    pos_ += size;
  }
  std::uint64_t U64() {
    std::uint64_t v;
    Raw(&v, sizeof v);
    return v;
  }
  float F32() {
    float v;
    Raw(&v, sizeof v);
    return v;
  }
  double F64() {
    double v;
    Raw(&v, sizeof v);
    return v;
  }
  std::string Chars(size_t n) {
    Require(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Count read from the stream, checked against the bytes it implies.
  std::uint64_t Count(size_t min_bytes_each) {
    const std::uint64_t n = U64();
    if (min_bytes_each > 0 && n > remaining() / min_bytes_each) {
      throw Error(overrun_code_, "element count exceeds stream size");
    }
    return n;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  void Seek(size_t pos) {
    if (pos > bytes_.size()) throw Error(overrun_code_, "seek past end");
    pos_ = pos;
  }

 private:
  void Require(size_t size) const {
    if (size > bytes_.size() - pos_) {
      throw Error(overrun_code_, "unexpected end of stream");
    }
  }

  std::span<const std::uint8_t> bytes_;
  size_t pos_ = 0;
  ErrorCode overrun_code_;
};

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const std::uint8_t> bytes);

}  // namespace pram::detail
