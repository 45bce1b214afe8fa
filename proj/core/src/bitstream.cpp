#include "lsc/bitstream.h"

#include <cmath>
#include <cstring>

#include "lsc/io.h"

namespace lsc::bits {

const std::array<double, 6> kLambdaGrid = {0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.0483};

int quality_index_for_lambda(double lambda) {
  for (std::size_t i = 0; i < kLambdaGrid.size(); ++i) {
    if (std::abs(lambda - kLambdaGrid[i]) < 1e-12) return static_cast<int>(i) + 1;
  }
  return 0;
}

std::size_t Header::header_size() const {
  return 4 + 1 + 2 + 2 + 1 + 1 + 2 * channel_counts.size() + 4 * stream_lengths.size();
}

std::uint64_t Header::payload_size() const {
  std::uint64_t s = 0;
  for (std::uint32_t v : stream_lengths) s += v;
  return s;
}

std::uint64_t Header::stream_offset(int stream) const {
  LSC_CHECK(stream >= 0 && stream < static_cast<int>(stream_lengths.size()), invalid_argument,
            "stream index out of range");
  std::uint64_t off = 0;
  for (int i = 0; i < stream; ++i) off += stream_lengths[i];
  return off;
}

std::vector<std::uint8_t> serialize_header(const Header& h) {
  LSC_CHECK(h.channel_counts.size() == h.num_layers, invalid_argument, "channel count list mismatch");
  LSC_CHECK(h.stream_lengths.size() == static_cast<std::size_t>(h.num_layers) + 1, invalid_argument,
            "stream length list mismatch");
  io::ByteWriter w;
  w.bytes(Header::kMagic, 4);
  w.u8(h.version);
  w.u16(h.width);
  w.u16(h.height);
  w.u8(h.quality_index);
  w.u8(h.num_layers);
  for (std::uint16_t c : h.channel_counts) w.u16(c);
  for (std::uint32_t l : h.stream_lengths) w.u32(l);
  return w.take();
}

Header parse_header(const std::uint8_t* data, std::size_t size) {
  io::ByteReader r(data, size);
  char magic[4];
  r.bytes(magic, 4);
  LSC_CHECK(std::memcmp(magic, Header::kMagic, 4) == 0, corrupt_stream, "bad magic, not an lsc container");
  Header h;
  h.version = r.u8();
  LSC_CHECK(h.version == Header::kVersion, unsupported,
            "container version " + std::to_string(h.version) + " not supported");
  h.width = r.u16();
  h.height = r.u16();
  h.quality_index = r.u8();
  h.num_layers = r.u8();
  LSC_CHECK(h.num_layers >= 1, corrupt_stream, "container declares zero layers");
  for (int i = 0; i < h.num_layers; ++i) h.channel_counts.push_back(r.u16());
  for (int i = 0; i < h.num_layers + 1; ++i) h.stream_lengths.push_back(r.u32());
  return h;
}

std::vector<std::size_t> EncodeResult::stream_sizes() const {
  std::vector<std::size_t> s;
  for (std::uint32_t v : header.stream_lengths) s.push_back(v);
  return s;
}

namespace {

constexpr double kBitsProbFloor = 1e-40;

std::vector<double> gaussian_value_probs(double sigma) {
  std::vector<double> p(CdfTable::kValueSymbols);
  for (int s = 0; s < CdfTable::kValueSymbols; ++s) {
    const int k = s + CdfTable::kMinValue;
    p[s] = nn::gaussian_bin_probability(static_cast<double>(k), 0.0, sigma);
  }
  return p;
}

double tail_escape_prob(const std::vector<double>& probs) {
  double s = 0.0;
  for (double v : probs) s += v;
  return std::max(1e-9, 1.0 - s);
}

CdfTable gaussian_cdf_table(double sigma) {
  auto p = gaussian_value_probs(sigma);
  return quantize_pmf(p, tail_escape_prob(p));
}

std::vector<CdfTable> prior_cdf_tables(const entropy::FactorizedPrior& prior) {
  std::vector<CdfTable> tables;
  for (int c = 0; c < prior.channels(); ++c) {
    std::vector<double> p(CdfTable::kValueSymbols);
    for (int s = 0; s < CdfTable::kValueSymbols; ++s)
      p[s] = std::max(0.0, prior.bin_probability(c, s + CdfTable::kMinValue));
    tables.push_back(quantize_pmf(p, tail_escape_prob(p)));
  }
  return tables;
}

std::uint32_t symbols_checksum(const std::vector<int>& symbols) {
  io::ByteWriter w;
  for (int s : symbols) w.u32(static_cast<std::uint32_t>(s));
  return io::fnv1a32(w.buffer().data(), w.buffer().size());
}

double prior_bits(const entropy::FactorizedPrior& prior, const Tensor& zhat) {
  double bits = 0.0;
  for (int y = 0; y < zhat.h(); ++y)
    for (int x = 0; x < zhat.w(); ++x)
      for (int c = 0; c < zhat.c(); ++c) {
        double p = prior.bin_probability(c, static_cast<int>(std::llround(zhat.at(y, x, c))));
        if (!(p > kBitsProbFloor)) p = kBitsProbFloor;
        bits += -std::log2(p);
      }
  return bits;
}

}  // namespace

EncodeResult encode_image(const codec::Image& image, model::ScalableModel& model) {
  const auto& spec = model.layers();
  const int factor = model.transform().config().downsample_factor();
  LSC_CHECK(image.pixels.h() <= 0xFFFF && image.pixels.w() <= 0xFFFF, unsupported,
            "image dims exceed the 16-bit header fields");

  codec::Image padded;
  padded.pixels = codec::reflect_pad_to_multiple(image.pixels, factor);
  padded.orig_h = padded.pixels.h();
  padded.orig_w = padded.pixels.w();
  padded.source_id = image.source_id;

  Tensor y = codec::analysis_encode(padded, model.transform());
  const int n = y.h(), m = y.w();

  Tensor z = model.entropy().hyper_analysis_eval(y);
  Tensor zhat(z.dims());
  std::vector<int> z_symbols;
  z_symbols.reserve(static_cast<std::size_t>(z.size()));
  for (int yy = 0; yy < z.h(); ++yy)
    for (int xx = 0; xx < z.w(); ++xx)
      for (int c = 0; c < z.c(); ++c) {
        const int k = static_cast<int>(std::llround(z.at(yy, xx, c)));
        z_symbols.push_back(k);
        zhat.at(yy, xx, c) = static_cast<double>(k);
      }
  Tensor h_full = model.entropy().hyper_synthesis_eval(zhat, n, m);

  // Side stream: model hash, coded hyper-latent, checksum.
  EncodeResult res;
  res.model_trained = model.epochs_completed > 0;
  res.zhat = zhat;
  {
    io::ByteWriter side;
    side.u64(model.model_hash());
    RangeEncoder enc;
    auto tables = prior_cdf_tables(model.entropy().prior());
    std::size_t i = 0;
    for (int yy = 0; yy < zhat.h(); ++yy)
      for (int xx = 0; xx < zhat.w(); ++xx)
        for (int c = 0; c < zhat.c(); ++c) encode_symbol_int(enc, tables[c], z_symbols[i++]);
    auto rc = enc.finish();
    side.bytes(rc.data(), rc.size());
    side.u32(symbols_checksum(z_symbols));
    res.header.stream_lengths.push_back(static_cast<std::uint32_t>(side.buffer().size()));
    res.bytes = side.take();  // temporarily hold streams; header prepended at the end
  }

  res.estimate.pixel_count = image.pixels.h() * image.pixels.w();
  res.estimate.hyper_bits = prior_bits(model.entropy().prior(), zhat);

  std::vector<std::uint8_t> payload = std::move(res.bytes);
  for (int j = 0; j < spec.num_layers(); ++j) {
    Tensor yj = Tensor::hwc(n, m, spec.channel_counts[j]);
    const int off = spec.layer_offset(j);
    for (int yy = 0; yy < n; ++yy)
      for (int xx = 0; xx < m; ++xx)
        for (int c = 0; c < spec.channel_counts[j]; ++c) yj.at(yy, xx, c) = y.at(yy, xx, off + c);

    auto q = entropy::autoregressive_quantize(yj, model.entropy(), h_full, j);
    res.yhat_layers.push_back(q.yhat);
    res.estimate.layer_bits.push_back(entropy::gaussian_bits_total(q.yhat, {q.mu, q.sigma}));

    RangeEncoder enc;
    std::size_t i = 0;
    for (int yy = 0; yy < n; ++yy)
      for (int xx = 0; xx < m; ++xx)
        for (int c = 0; c < spec.channel_counts[j]; ++c) {
          encode_symbol_int(enc, gaussian_cdf_table(q.sigma.at(yy, xx, c)), q.symbols[i++]);
        }
    auto rc = enc.finish();
    io::ByteWriter stream;
    stream.bytes(rc.data(), rc.size());
    stream.u32(symbols_checksum(q.symbols));
    res.header.stream_lengths.push_back(static_cast<std::uint32_t>(stream.buffer().size()));
    const auto& sb = stream.buffer();
    payload.insert(payload.end(), sb.begin(), sb.end());
  }

  res.header.width = static_cast<std::uint16_t>(image.pixels.w());
  res.header.height = static_cast<std::uint16_t>(image.pixels.h());
  res.header.quality_index = static_cast<std::uint8_t>(quality_index_for_lambda(model.lambda));
  res.header.num_layers = static_cast<std::uint8_t>(spec.num_layers());
  for (int c : spec.channel_counts) res.header.channel_counts.push_back(static_cast<std::uint16_t>(c));

  res.bytes = serialize_header(res.header);
  res.bytes.insert(res.bytes.end(), payload.begin(), payload.end());
  return res;
}

DecodeResult decode_layers(const std::uint8_t* data, std::size_t size, model::ScalableModel& model,
                           int upto_layers) {
  Header h = parse_header(data, size);
  const auto& spec = model.layers();
  LSC_CHECK(upto_layers >= 1 && upto_layers <= h.num_layers, invalid_argument,
            "requested layer depth exceeds the container");
  LSC_CHECK(h.num_layers == spec.num_layers(), corrupt_stream,
            "container layer count does not match the checkpoint");
  for (int j = 0; j < spec.num_layers(); ++j)
    LSC_CHECK(h.channel_counts[j] == spec.channel_counts[j], corrupt_stream,
              "container channel partition does not match the checkpoint");

  const std::size_t header_size = h.header_size();
  // Bytes required for the requested prefix only; later streams may be
  // physically absent.
  std::uint64_t needed = header_size;
  for (int s = 0; s <= upto_layers; ++s) needed += h.stream_lengths[s];
  LSC_CHECK(size >= needed, corrupt_stream, "truncated container: required prefix streams incomplete");

  const int factor = model.transform().config().downsample_factor();
  const int padded_h = (h.height + factor - 1) / factor * factor;
  const int padded_w = (h.width + factor - 1) / factor * factor;
  const int n = padded_h / factor, m = padded_w / factor;

  DecodeResult out;
  out.header = h;
  out.latent_h = n;
  out.latent_w = m;

  // Side stream.
  {
    const std::uint8_t* p = data + header_size + h.stream_offset(0);
    const std::size_t len = h.stream_lengths[0];
    LSC_CHECK(len >= 12, corrupt_stream, "side stream too short");
    io::ByteReader hashr(p, 8);
    const std::uint64_t stream_hash = hashr.u64();
    LSC_CHECK(stream_hash == model.model_hash(), invalid_argument,
              "bitstream was produced by a different model configuration/weights");
    auto [hh, hw] = entropy::EntropyModel::hyper_dims(n, m);
    const int hc = model.entropy().config().hyper_channels;
    RangeDecoder dec(p + 8, len - 12);
    auto tables = prior_cdf_tables(model.entropy().prior());
    Tensor zhat = Tensor::hwc(hh, hw, hc);
    std::vector<int> symbols;
    symbols.reserve(static_cast<std::size_t>(hh) * hw * hc);
    for (int yy = 0; yy < hh; ++yy)
      for (int xx = 0; xx < hw; ++xx)
        for (int c = 0; c < hc; ++c) {
          const int k = decode_symbol_int(dec, tables[c]);
          symbols.push_back(k);
          zhat.at(yy, xx, c) = static_cast<double>(k);
        }
    io::ByteReader ckr(p + len - 4, 4);
    LSC_CHECK(ckr.u32() == symbols_checksum(symbols), corrupt_stream, "side stream checksum mismatch");
    out.zhat = std::move(zhat);
  }
  out.hyper_tensor = model.entropy().hyper_synthesis_eval(out.zhat, n, m);

  for (int j = 0; j < upto_layers; ++j) {
    const std::uint8_t* p = data + header_size + h.stream_offset(j + 1);
    const std::size_t len = h.stream_lengths[j + 1];
    LSC_CHECK(len >= 4, corrupt_stream, "layer stream too short");
    RangeDecoder dec(p, len - 4);
    entropy::LayerAutoregressor ar(model.entropy(), out.hyper_tensor, j, n, m);
    const int lj = spec.channel_counts[j];
    std::vector<int> symbols;
    symbols.reserve(static_cast<std::size_t>(n) * m * lj);
    std::vector<double> mu, sigma, vals(static_cast<std::size_t>(lj));
    for (int py = 0; py < n; ++py)
      for (int px = 0; px < m; ++px) {
        ar.params_at(py, px, mu, sigma);
        for (int c = 0; c < lj; ++c) {
          const int k = decode_symbol_int(dec, gaussian_cdf_table(sigma[c]));
          symbols.push_back(k);
          vals[c] = mu[c] + k;
        }
        ar.commit(py, px, vals);
      }
    io::ByteReader ckr(p + len - 4, 4);
    LSC_CHECK(ckr.u32() == symbols_checksum(symbols), corrupt_stream,
              "layer " + std::to_string(j + 1) + " checksum mismatch");
    out.yhat_layers.push_back(ar.yhat());
  }
  return out;
}

codec::Image decode_image(const std::uint8_t* data, std::size_t size, model::ScalableModel& model) {
  DecodeResult d = decode_layers(data, size, model, model.layers().num_layers());
  const int n = d.latent_h, m = d.latent_w;
  Tensor yhat = Tensor::hwc(n, m, model.layers().total_channels());
  int off = 0;
  for (const Tensor& layer : d.yhat_layers) {
    for (int yy = 0; yy < n; ++yy)
      for (int xx = 0; xx < m; ++xx)
        for (int c = 0; c < layer.c(); ++c) yhat.at(yy, xx, off + c) = layer.at(yy, xx, c);
    off += layer.c();
  }
  return codec::synthesis_decode(yhat, model.transform(), d.header.height, d.header.width);
}

}  // namespace lsc::bits
