#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lsc/nn.h"
#include "lsc/tensor.h"

namespace lsc::codec {

/// RGB image in [0,1] with its pre-padding dimensions.
struct Image {
  Tensor pixels;  // H x W x 3
  std::string source_id;
  int orig_h = 0;
  int orig_w = 0;
};

Image make_image(Tensor pixels, std::string source_id = "");

/// Channel partition of the latent into coding layers. Layer 1 is the
/// base layer; a task binding names the backend served by that prefix.
struct LayerSpec {
  std::vector<int> channel_counts;
  std::vector<std::string> task_bindings;  // same length; "" = no task

  int num_layers() const { return static_cast<int>(channel_counts.size()); }
  int total_channels() const;
  int prefix_channels(int layers) const;  // sum of channel_counts[0..layers)
  int layer_offset(int layer_index) const;
  void validate(int latent_channels) const;
};

struct CodecConfig {
  int stages = 4;   // stride-2 analysis stages; downsampling factor is 2^stages
  int hidden = 32;  // width of intermediate transform stages
  int latent_channels = 32;
  int kernel = 5;
  double beta_min = 1e-6;

  int downsample_factor() const { return 1 << stages; }
};

/// Analysis/synthesis transform pair with GDN/IGDN nonlinearities.
class TransformModel {
 public:
  TransformModel() = default;
  TransformModel(const CodecConfig& cfg, nn::Rng& rng);

  nn::Var analysis(nn::Tape& t, nn::Var x) const;
  nn::Var synthesis(nn::Tape& t, nn::Var y) const;

  void collect(std::vector<nn::Parameter*>& out);
  void project();
  const CodecConfig& config() const { return cfg_; }

 private:
  CodecConfig cfg_;
  std::vector<nn::Conv2d> enc_;
  std::vector<nn::Gdn> enc_gdn_;
  std::vector<nn::ConvTranspose2d> dec_;
  std::vector<nn::Gdn> dec_gdn_;
};

// -- Instrumentation -----------------------------------------------------
// Counts synthesis invocations so tests can assert that latent-space task
// inference never reconstructs the image.
std::uint64_t synthesis_call_count();
void reset_synthesis_call_count();

// -- Tensor-level operations ----------------------------------------------

/// Image -> unquantized latent. Requires dims divisible by the
/// downsampling factor and finite input.
Tensor analysis_encode(const Image& image, const TransformModel& model);

/// Latent -> image, clamped to [0,1]. If crop dims are given the output is
/// cropped to them (undoing encoder padding).
Image synthesis_decode(const Tensor& latent, const TransformModel& model, int crop_h = -1, int crop_w = -1);

enum class QuantMode { train, eval };

/// Eval: round(y - mean) + mean, elementwise. Train: y + u with
/// u ~ Uniform(-0.5, 0.5) drawn from `rng` (which must be non-null).
Tensor quantize(const Tensor& latent, const Tensor& means, QuantMode mode, nn::Rng* rng = nullptr);

/// GDN / IGDN on a plain tensor (the module's `inverse` flag picks the
/// direction).
Tensor gdn_apply(const Tensor& x, const nn::Gdn& params);

/// Pads with reflected rows/columns on the bottom/right edges.
Tensor reflect_pad_to_multiple(const Tensor& image, int multiple);
Tensor crop_top_left(const Tensor& image, int h, int w);

}  // namespace lsc::codec
