#include "lsc/codec.h"

#include <atomic>
#include <cmath>
#include <numeric>

namespace lsc::codec {

using nn::Tape;
using nn::Var;

Image make_image(Tensor pixels, std::string source_id) {
  LSC_CHECK(pixels.rank() == 3 && pixels.c() == 3, shape_mismatch, "image must be HxWx3");
  LSC_CHECK(pixels.all_finite(), invalid_argument, "image contains non-finite values");
  LSC_CHECK(pixels.min() >= 0.0 && pixels.max() <= 1.0, invalid_argument, "image values must lie in [0,1]");
  Image img;
  img.orig_h = pixels.h();
  img.orig_w = pixels.w();
  img.pixels = std::move(pixels);
  img.source_id = std::move(source_id);
  return img;
}

int LayerSpec::total_channels() const {
  return std::accumulate(channel_counts.begin(), channel_counts.end(), 0);
}

int LayerSpec::prefix_channels(int layers) const {
  LSC_CHECK(layers >= 0 && layers <= num_layers(), invalid_argument, "prefix length out of range");
  return std::accumulate(channel_counts.begin(), channel_counts.begin() + layers, 0);
}

int LayerSpec::layer_offset(int layer_index) const { return prefix_channels(layer_index); }

void LayerSpec::validate(int latent_channels) const {
  LSC_CHECK(!channel_counts.empty(), invalid_argument, "layer spec needs at least one layer");
  for (int c : channel_counts) LSC_CHECK(c > 0, invalid_argument, "layer channel counts must be positive");
  LSC_CHECK(total_channels() == latent_channels, invalid_argument,
            "layer channel counts must sum to the latent width");
  LSC_CHECK(task_bindings.empty() || task_bindings.size() == channel_counts.size(), invalid_argument,
            "task bindings must align with layers");
}

TransformModel::TransformModel(const CodecConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  LSC_CHECK(cfg.stages >= 1, invalid_argument, "need at least one transform stage");
  const int k = cfg.kernel, pad = cfg.kernel / 2;
  for (int s = 0; s < cfg.stages; ++s) {
    const int cin = s == 0 ? 3 : cfg.hidden;
    const int cout = s == cfg.stages - 1 ? cfg.latent_channels : cfg.hidden;
    enc_.emplace_back("enc" + std::to_string(s), cin, cout, k, 2, pad, rng);
    if (s != cfg.stages - 1) enc_gdn_.emplace_back("enc_gdn" + std::to_string(s), cout, false, cfg.beta_min);
  }
  for (int s = 0; s < cfg.stages; ++s) {
    const int cin = s == 0 ? cfg.latent_channels : cfg.hidden;
    const int cout = s == cfg.stages - 1 ? 3 : cfg.hidden;
    dec_.emplace_back("dec" + std::to_string(s), cin, cout, k, 2, pad, 1, rng);
    if (s != cfg.stages - 1) dec_gdn_.emplace_back("dec_igdn" + std::to_string(s), cout, true, cfg.beta_min);
  }
}

Var TransformModel::analysis(Tape& t, Var x) const {
  Var h = x;
  for (std::size_t s = 0; s < enc_.size(); ++s) {
    h = enc_[s].forward(t, h);
    if (s + 1 < enc_.size()) h = enc_gdn_[s].forward(t, h);
  }
  return h;
}

namespace {
std::atomic<std::uint64_t> g_synthesis_calls{0};
}

std::uint64_t synthesis_call_count() { return g_synthesis_calls.load(); }
void reset_synthesis_call_count() { g_synthesis_calls.store(0); }

Var TransformModel::synthesis(Tape& t, Var y) const {
  g_synthesis_calls.fetch_add(1);
  Var h = y;
  for (std::size_t s = 0; s < dec_.size(); ++s) {
    h = dec_[s].forward(t, h);
    if (s + 1 < dec_.size()) h = dec_gdn_[s].forward(t, h);
  }
  return h;
}

void TransformModel::collect(std::vector<nn::Parameter*>& out) {
  for (auto& m : enc_) m.collect(out);
  for (auto& m : enc_gdn_) m.collect(out);
  for (auto& m : dec_) m.collect(out);
  for (auto& m : dec_gdn_) m.collect(out);
}

void TransformModel::project() {
  for (auto& g : enc_gdn_) g.project();
  for (auto& g : dec_gdn_) g.project();
}

Tensor analysis_encode(const Image& image, const TransformModel& model) {
  const int f = model.config().downsample_factor();
  LSC_CHECK(image.pixels.h() % f == 0 && image.pixels.w() % f == 0, shape_mismatch,
            "image dims must be divisible by " + std::to_string(f));
  LSC_CHECK(image.pixels.all_finite(), invalid_argument, "non-finite image input");
  Tape t;
  Var x = t.constant(image.pixels);
  Var y = model.analysis(t, x);
  return t.value(y);
}

Image synthesis_decode(const Tensor& latent, const TransformModel& model, int crop_h, int crop_w) {
  LSC_CHECK(latent.rank() == 3 && latent.c() == model.config().latent_channels, shape_mismatch,
            "latent width does not match the model");
  Tape t;
  Var y = t.constant(latent);
  Var x = model.synthesis(t, y);
  Tensor px = t.value(x);
  for (std::int64_t i = 0; i < px.size(); ++i) px[i] = std::clamp(px[i], 0.0, 1.0);
  if (crop_h > 0 && crop_w > 0) px = crop_top_left(px, crop_h, crop_w);
  Image img;
  img.orig_h = px.h();
  img.orig_w = px.w();
  img.pixels = std::move(px);
  return img;
}

Tensor quantize(const Tensor& latent, const Tensor& means, QuantMode mode, nn::Rng* rng) {
  LSC_CHECK(latent.same_shape(means), shape_mismatch, "quantize: means shape must match latent");
  Tensor out = latent;
  if (mode == QuantMode::eval) {
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::round(latent[i] - means[i]) + means[i];
  } else {
    LSC_CHECK(rng != nullptr, invalid_argument, "train-mode quantize needs an rng");
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = latent[i] + rng->uniform(-0.5, 0.5);
  }
  return out;
}

Tensor gdn_apply(const Tensor& x, const nn::Gdn& params) {
  Tape t;
  Var v = params.forward(t, t.constant(x));
  return t.value(v);
}

Tensor reflect_pad_to_multiple(const Tensor& image, int multiple) {
  const int h = image.h(), w = image.w(), c = image.c();
  const int ph = (multiple - h % multiple) % multiple;
  const int pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return image;
  LSC_CHECK(ph < h && pw < w, invalid_argument, "image too small to reflect-pad");
  Tensor out = Tensor::hwc(h + ph, w + pw, c);
  for (int y = 0; y < h + ph; ++y) {
    const int sy = y < h ? y : 2 * h - 2 - y;  // reflect without repeating the edge
    for (int x = 0; x < w + pw; ++x) {
      const int sx = x < w ? x : 2 * w - 2 - x;
      for (int k = 0; k < c; ++k) out.at(y, x, k) = image.at(sy, sx, k);
    }
  }
  return out;
}

Tensor crop_top_left(const Tensor& image, int h, int w) {
  LSC_CHECK(h >= 1 && w >= 1 && h <= image.h() && w <= image.w(), invalid_argument, "crop dims out of range");
  if (h == image.h() && w == image.w()) return image;
  Tensor out = Tensor::hwc(h, w, image.c());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < image.c(); ++k) out.at(y, x, k) = image.at(y, x, k);
  return out;
}

}  // namespace lsc::codec
