#include "lsc/rangecoder.h"

#include <algorithm>
#include <cmath>

namespace lsc::bits {

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_ >> 32) != 0 || static_cast<std::uint32_t>(low_) < 0xFF000000u) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t byte = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(byte + carry));
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ << 8) & 0xFFFFFFFFull;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
  LSC_CHECK(freq > 0 && cum + freq <= total, invalid_argument, "zero-probability symbol");
  range_ /= total;
  low_ += static_cast<std::uint64_t>(cum) * range_;
  range_ *= freq;
  while (range_ < kRangeTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_raw_byte(std::uint8_t byte) { encode(byte, 1, 256); }

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {
  next_byte();  // aligns with the encoder's initial cache byte
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  // Bytes past the end read as zero: the encoder's flush may be truncated
  // by framing, and any real corruption is caught by stream checksums.
  if (pos_ >= size_) return 0;
  return data_[pos_++];
}

std::uint32_t RangeDecoder::decode_target(std::uint32_t total) {
  range_ /= total;
  auto t = static_cast<std::uint32_t>(code_ / range_);
  return std::min(t, total - 1);
}

void RangeDecoder::decode_update(std::uint32_t cum, std::uint32_t freq) {
  code_ -= static_cast<std::uint64_t>(cum) * range_;
  range_ *= freq;
  while (range_ < kRangeTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::uint8_t RangeDecoder::decode_raw_byte() {
  const auto t = decode_target(256);
  decode_update(t, 1);
  return static_cast<std::uint8_t>(t);
}

int CdfTable::find(std::uint32_t target) const {
  // cum is strictly increasing (every freq >= 1)
  auto it = std::upper_bound(cum.begin(), cum.end(), target);
  return static_cast<int>(it - cum.begin()) - 1;
}

CdfTable quantize_pmf(const std::vector<double>& value_probs, double escape_prob) {
  LSC_CHECK(static_cast<int>(value_probs.size()) == CdfTable::kValueSymbols, invalid_argument,
            "pmf must cover the 256 value symbols");
  const int n = CdfTable::kSymbols;
  const std::uint32_t budget = kProbTotal - static_cast<std::uint32_t>(n);

  double total = escape_prob;
  for (double p : value_probs) {
    LSC_CHECK(p >= 0.0 && std::isfinite(p), numeric, "invalid symbol probability");
    total += p;
  }
  if (total <= 0.0) total = 1.0;

  CdfTable t;
  t.cum.resize(n + 1);
  t.cum[0] = 0;
  double running = 0.0;
  std::uint32_t prev_slots = 0;
  for (int s = 0; s < n; ++s) {
    const double p = s < CdfTable::kValueSymbols ? value_probs[s] : escape_prob;
    running += p;
    // cumulative rounding keeps the total exact and deterministic
    auto slots = s == n - 1 ? budget : static_cast<std::uint32_t>(std::llround(running / total * budget));
    slots = std::min(std::max(slots, prev_slots), budget);
    t.cum[s + 1] = t.cum[s] + (slots - prev_slots) + 1;
    prev_slots = slots;
  }
  LSC_CHECK(t.cum[n] == kProbTotal, numeric, "pmf quantization did not fill the code space");
  return t;
}

namespace {
std::uint32_t zigzag32(int v) {
  return (static_cast<std::uint32_t>(v) << 1) ^ static_cast<std::uint32_t>(v >> 31);
}
int unzigzag32(std::uint32_t u) { return static_cast<int>((u >> 1) ^ (~(u & 1) + 1)); }
}  // namespace

void encode_symbol_int(RangeEncoder& enc, const CdfTable& table, int value) {
  if (value >= CdfTable::kMinValue && value <= CdfTable::kMaxValue) {
    const int s = value - CdfTable::kMinValue;
    enc.encode(table.cum[s], table.freq(s));
    return;
  }
  enc.encode(table.cum[CdfTable::kEscape], table.freq(CdfTable::kEscape));
  const std::uint32_t u = zigzag32(value);
  for (int i = 0; i < 4; ++i) enc.encode_raw_byte(static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF));
}

int decode_symbol_int(RangeDecoder& dec, const CdfTable& table) {
  const std::uint32_t target = dec.decode_target();
  const int s = table.find(target);
  dec.decode_update(table.cum[s], table.freq(s));
  if (s != CdfTable::kEscape) return s + CdfTable::kMinValue;
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(dec.decode_raw_byte()) << (8 * i);
  return unzigzag32(u);
}

}  // namespace lsc::bits
