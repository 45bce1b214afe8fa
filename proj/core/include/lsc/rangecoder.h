#pragma once

#include <cstdint>
#include <vector>

#include "lsc/tensor.h"

namespace lsc::bits {

constexpr std::uint32_t kProbBits = 16;
constexpr std::uint32_t kProbTotal = 1u << kProbBits;
constexpr std::uint32_t kRangeTop = 1u << 24;

/// Carry-less byte-oriented range coder: 64-bit low, 32-bit range, pending
/// bytes resolved on carry. Renormalization keeps range >= 2^24.
class RangeEncoder {
 public:
  /// Narrows to [cum, cum+freq) out of `total`; freq must be positive.
  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total = kProbTotal);
  void encode_raw_byte(std::uint8_t byte);
  std::vector<std::uint8_t> finish();
  std::size_t size_so_far() const { return out_.size(); }

 private:
  void shift_low();
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;  // bytes awaiting carry resolution
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const std::uint8_t* data, std::size_t size);
  /// Scaled code value in [0, total); locate the symbol whose cumulative
  /// interval contains it, then call decode_update.
  std::uint32_t decode_target(std::uint32_t total = kProbTotal);
  void decode_update(std::uint32_t cum, std::uint32_t freq);
  std::uint8_t decode_raw_byte();

 private:
  std::uint8_t next_byte();
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::uint64_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

/// Cumulative frequency table over the bounded symbol alphabet
/// [-127..128] plus a trailing escape symbol (outliers coded raw).
/// Frequencies are 16-bit quantized with a floor of 1 (2^-16).
struct CdfTable {
  static constexpr int kMinValue = -127;
  static constexpr int kMaxValue = 128;
  static constexpr int kValueSymbols = kMaxValue - kMinValue + 1;  // 256
  static constexpr int kEscape = kValueSymbols;                    // symbol index 256
  static constexpr int kSymbols = kValueSymbols + 1;

  std::vector<std::uint32_t> cum;  // size kSymbols+1, cum[0]=0, cum[kSymbols]=kProbTotal

  std::uint32_t freq(int symbol) const { return cum[symbol + 1] - cum[symbol]; }
  int find(std::uint32_t target) const;
};

/// Quantizes raw probabilities (one per value symbol, plus escape mass)
/// into an exact 2^16 cumulative table with every bin >= 1.
CdfTable quantize_pmf(const std::vector<double>& value_probs, double escape_prob);

void encode_symbol_int(RangeEncoder& enc, const CdfTable& table, int value);
int decode_symbol_int(RangeDecoder& dec, const CdfTable& table);

}  // namespace lsc::bits
