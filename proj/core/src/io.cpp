#include "lsc/io.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lsc::io {

namespace fs = std::filesystem;

Tensor read_ppm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  LSC_CHECK(f.good(), not_found, "cannot open " + path.string());
  std::string magic;
  f >> magic;
  LSC_CHECK(magic == "P6", corrupt_stream, "not a binary PPM: " + path.string());
  auto next_int = [&f, &path]() {
    // skip whitespace and comments
    int ch = f.get();
    while (ch == '#' || std::isspace(ch)) {
      if (ch == '#') {
        while (ch != '\n' && ch != EOF) ch = f.get();
      }
      ch = f.get();
    }
    LSC_CHECK(ch != EOF, corrupt_stream, "truncated PPM header: " + path.string());
    f.unget();
    int v = 0;
    f >> v;
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  LSC_CHECK(w > 0 && h > 0 && maxval == 255, unsupported, "PPM must be 8-bit: " + path.string());
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  LSC_CHECK(f.gcount() == static_cast<std::streamsize>(raw.size()), corrupt_stream,
            "truncated PPM payload: " + path.string());
  Tensor img = Tensor::hwc(h, w, 3);
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = raw[static_cast<std::size_t>(i)] / 255.0;
  return img;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  LSC_CHECK(image.rank() == 3 && image.c() == 3, shape_mismatch, "write_ppm expects HxWx3");
  std::string header = "P6\n" + std::to_string(image.w()) + " " + std::to_string(image.h()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(image.size()));
  for (std::int64_t i = 0; i < image.size(); ++i) {
    double v = std::clamp(image[i], 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  write_file_atomic(path, out.data(), out.size());
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  LSC_CHECK(f.good(), not_found, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> data(size);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  LSC_CHECK(f.gcount() == static_cast<std::streamsize>(size), corrupt_stream, "short read: " + path.string());
  return data;
}

void write_file_atomic(const fs::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    LSC_CHECK(f.good(), not_found, "cannot create " + tmp.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    LSC_CHECK(f.good(), corrupt_stream, "short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint32_t fnv1a32(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t h = 0x811c9dc5u;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x01000193u;
  }
  return h;
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v & 0xFF));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}
void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void ByteWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  u64(bits);
}
void ByteWriter::bytes(const void* data, std::size_t size) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + size);
}

void ByteReader::need(std::size_t n) {
  LSC_CHECK(pos_ + n <= size_, corrupt_stream, "truncated data while parsing");
}
std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}
std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}
std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}
std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}
double ByteReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}
void ByteReader::bytes(void* out, std::size_t size) {
  need(size);
  std::memcpy(out, data_ + pos_, size);
  pos_ += size;
}

}  // namespace lsc::io
