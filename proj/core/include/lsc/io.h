#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lsc/tensor.h"

namespace lsc::io {

/// Binary PPM (P6), 8 bits per sample. Pixels are mapped to [0,1].
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temp file and renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint32_t fnv1a32(const void* data, std::size_t size);

/// Little-endian byte writer/reader for fixed-layout headers.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t size);
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* out, std::size_t size);
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n);
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace lsc::io
