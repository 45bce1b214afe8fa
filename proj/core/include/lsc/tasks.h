#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "lsc/dataset.h"
#include "lsc/nn.h"
#include "lsc/tensor.h"

namespace lsc::tasks {

enum class Activation { linear, relu, leaky_relu };

struct TaskOutput {
  std::string task_id;
  // shape-count task
  std::array<int, data::kNumShapeClasses> predicted_counts{};
  std::vector<double> logits;
  // shape-mask task
  std::vector<std::uint8_t> mask;
  int mask_size = 0;
};

/// A frozen vision network split into a front-end (image -> feature
/// tensor) and a back-end (feature tensor -> task output), with named tap
/// points along the back-end for feature-space distortions.
class TaskBackend {
 public:
  virtual ~TaskBackend() = default;

  virtual const std::string& id() const = 0;
  virtual Activation final_activation() const = 0;
  virtual int feature_channels() const = 0;
  /// Feature resolution divided by latent resolution (latent = image/16).
  virtual int feature_upscale() const = 0;

  virtual nn::Var front_end(nn::Tape& t, nn::Var image) const = 0;
  /// Frozen post-stage applied right after the split (normalization +
  /// activation); used by the through_backend_stub distortion variant.
  virtual nn::Var backend_stub(nn::Tape& t, nn::Var features) const = 0;
  virtual std::vector<std::string> tap_names() const = 0;
  virtual std::vector<nn::Var> taps_from_features(nn::Tape& t, nn::Var features) const = 0;

  virtual TaskOutput infer_from_features(const Tensor& features) const = 0;
  TaskOutput infer_from_image(const Tensor& image) const;

  /// Metric in [0,1] against ground truth.
  virtual double score(const TaskOutput& out, const data::Sample& truth) const = 0;

  virtual void collect(std::vector<nn::Parameter*>& out) = 0;
  std::uint64_t fingerprint();
};

/// Small convnet predicting per-class shape counts. Front-end split
/// points: "mid8" (image/8 resolution, pre-normalization conv output,
/// linear) or "mid16" (image/4 resolution, post-activation).
class ShapeCountNet : public TaskBackend {
 public:
  ShapeCountNet(std::string id, std::string split, nn::Rng& rng);

  const std::string& id() const override { return id_; }
  Activation final_activation() const override;
  int feature_channels() const override;
  int feature_upscale() const override;
  nn::Var front_end(nn::Tape& t, nn::Var image) const override;
  nn::Var backend_stub(nn::Tape& t, nn::Var features) const override;
  std::vector<std::string> tap_names() const override;
  std::vector<nn::Var> taps_from_features(nn::Tape& t, nn::Var features) const override;
  TaskOutput infer_from_features(const Tensor& features) const override;
  double score(const TaskOutput& out, const data::Sample& truth) const override;
  void collect(std::vector<nn::Parameter*>& out) override;

  nn::Var logits_from_image(nn::Tape& t, nn::Var image) const;
  nn::Var logits_from_features(nn::Tape& t, nn::Var features) const;

 private:
  nn::Var stage2_features(nn::Tape& t, nn::Var image) const;  // mid16 (post-act)
  nn::Var conv3_pre(nn::Tape& t, nn::Var act2) const;         // mid8 (pre-norm)

  std::string id_, split_;
  nn::Conv2d c1_, c2_, c3_, c4_, fc_;
  nn::Parameter bn_scale_, bn_shift_;
};

/// Small encoder-decoder predicting per-pixel shape class masks. Split
/// point "enc16" at image/4 resolution, ReLU activation.
class ShapeMaskNet : public TaskBackend {
 public:
  ShapeMaskNet(std::string id, nn::Rng& rng);

  const std::string& id() const override { return id_; }
  Activation final_activation() const override { return Activation::relu; }
  int feature_channels() const override { return 32; }
  int feature_upscale() const override { return 4; }
  nn::Var front_end(nn::Tape& t, nn::Var image) const override;
  nn::Var backend_stub(nn::Tape& t, nn::Var features) const override;
  std::vector<std::string> tap_names() const override;
  std::vector<nn::Var> taps_from_features(nn::Tape& t, nn::Var features) const override;
  TaskOutput infer_from_features(const Tensor& features) const override;
  double score(const TaskOutput& out, const data::Sample& truth) const override;
  void collect(std::vector<nn::Parameter*>& out) override;

  nn::Var logits_from_features(nn::Tape& t, nn::Var features) const;

 private:
  std::string id_;
  nn::Conv2d c1_, c2_, b1_, b3_, b5_;
  nn::ConvTranspose2d b2_, b4_;
};

class BackendRegistry {
 public:
  /// Returns the task id; rejects duplicate ids.
  std::string register_backend(std::unique_ptr<TaskBackend> backend);
  TaskBackend& at(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::vector<std::unique_ptr<TaskBackend>> backends_;
};

/// Latent space transform: maps a prefix of quantized sub-latents to a
/// backend's intermediate feature space through residual-block sets with
/// per-set upsampling and inverse GDN.
struct LstConfig {
  int input_channels = 0;
  int output_channels = 0;
  int width = 32;
  std::vector<int> scale_factors = {2, 1, 1, 1};  // one per residual-block set
  Activation final_activation = Activation::linear;

  int total_upscale() const;
  static std::vector<int> scales_for_upscale(int upscale, int num_sets = 4);
};

class Lst {
 public:
  Lst() = default;
  Lst(std::string name, const LstConfig& cfg, nn::Rng& rng);
  nn::Var forward(nn::Tape& t, nn::Var prefix_latent) const;
  void collect(std::vector<nn::Parameter*>& out);
  void project();
  const LstConfig& config() const { return cfg_; }

 private:
  struct BlockSet {
    nn::Conv2d plain_a, plain_b, plain_skip;
    bool has_plain_skip = false;
    nn::Conv2d up_a_conv, up_b;
    nn::ConvTranspose2d up_a_tconv;
    bool up_uses_tconv = false;
    nn::Conv2d up_skip;  // 1x1 after nearest-upsample when r > 1
    bool has_up_skip = false;
    nn::Gdn igdn;
    int r = 1;
  };
  nn::Var residual_plain(nn::Tape& t, nn::Var x, const BlockSet& s) const;
  nn::Var residual_up(nn::Tape& t, nn::Var x, const BlockSet& s) const;

  LstConfig cfg_;
  std::vector<BlockSet> sets_;
  nn::Conv2d out_conv_;
};

nn::Var apply_activation(nn::Var x, Activation act);

enum class DistortionVariant { direct, through_backend_stub, multi_tap };

/// Feature-space distortion between the backend's true features and the
/// LST estimate, per the selected variant. Both tensors pass through the
/// same frozen stages.
nn::Var feature_distortion(nn::Tape& t, nn::Var estimated, nn::Var target, const TaskBackend& backend,
                           DistortionVariant variant);

/// Cross-entropy helpers shared by backend pretraining.
nn::Var count_cross_entropy(nn::Tape& t, nn::Var logits, const std::array<int, 3>& counts);
nn::Var mask_cross_entropy(nn::Tape& t, nn::Var logits, const std::vector<std::uint8_t>& mask);

struct PretrainConfig {
  int epochs = 6;
  int batch = 16;
  double lr = 1e-3;
  int dataset_size = 512;
  std::uint64_t seed = 7;
};

/// Trains a backend on clean images, then reports the mean metric on a
/// held-out set. The backend is frozen afterwards by simply not passing
/// its parameters to any later optimizer.
double pretrain_backend(TaskBackend& backend, const data::ShapesParams& corpus, const PretrainConfig& cfg);

double evaluate_backend_on_images(const TaskBackend& backend, const std::vector<data::Sample>& samples);

}  // namespace lsc::tasks
