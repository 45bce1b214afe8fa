#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lsc/entropy.h"
#include "lsc/model.h"
#include "lsc/rangecoder.h"

namespace lsc::bits {

/// Table-I lambda grid; quality indices 1..6.
extern const std::array<double, 6> kLambdaGrid;
int quality_index_for_lambda(double lambda);

/// Fixed little-endian container header: magic "LSC1", version, true
/// image dims, quality index, layer channel counts and per-stream byte
/// lengths (side stream first, then layers 1..S).
struct Header {
  static constexpr char kMagic[4] = {'L', 'S', 'C', '1'};
  static constexpr std::uint8_t kVersion = 1;

  std::uint8_t version = kVersion;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t quality_index = 0;  // 0 = custom lambda
  std::uint8_t num_layers = 0;
  std::vector<std::uint16_t> channel_counts;
  std::vector<std::uint32_t> stream_lengths;  // size num_layers + 1

  std::size_t header_size() const;
  std::uint64_t payload_size() const;
  /// Byte offset of a stream within the payload (0 = side).
  std::uint64_t stream_offset(int stream) const;
};

std::vector<std::uint8_t> serialize_header(const Header& h);
Header parse_header(const std::uint8_t* data, std::size_t size);

struct EncodeResult {
  std::vector<std::uint8_t> bytes;
  Header header;
  entropy::RateReport estimate;      // from the parameters actually coded against
  std::vector<Tensor> yhat_layers;   // encoder-side quantized sub-latents
  Tensor zhat;
  bool model_trained = true;

  double actual_bits() const { return 8.0 * static_cast<double>(bytes.size()); }
  std::vector<std::size_t> stream_sizes() const;
};

/// Full encode: pad, transform, quantize sequentially per layer, and emit
/// the layered container. Side stream codes the hyper-latent under the
/// factorized prior; each layer stream codes its sub-latent raster-
/// sequentially under (CTX_j, EP_j, H_j).
EncodeResult encode_image(const codec::Image& image, model::ScalableModel& model);

struct DecodeResult {
  Header header;
  std::vector<Tensor> yhat_layers;  // layers 1..k
  Tensor zhat;
  Tensor hyper_tensor;              // decoded H (2C channels, latent resolution)
  int latent_h = 0, latent_w = 0;
};

/// Decodes the side stream plus layers 1..upto_layers. Never touches
/// bytes belonging to later streams, so physically truncated files
/// decode as long as the requested prefix is intact.
DecodeResult decode_layers(const std::uint8_t* data, std::size_t size, model::ScalableModel& model,
                           int upto_layers);

/// Convenience: decode all layers and run the synthesis transform,
/// cropping to the true dims from the header.
codec::Image decode_image(const std::uint8_t* data, std::size_t size, model::ScalableModel& model);

}  // namespace lsc::bits
