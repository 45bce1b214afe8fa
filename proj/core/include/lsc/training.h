#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsc/bitstream.h"
#include "lsc/dataset.h"
#include "lsc/model.h"

namespace lsc::train {

struct LossWeights {
  double lambda = 0.013;
  std::vector<double> gamma;  // one per task-bound layer, in layer order

  /// Stock gammas: 0.006 for the two-layer stub variant, 0.0015 for the
  /// three-layer multi-tap variant.
  static double default_gamma(model::NetworkType type);
  void validate() const;
};

struct TrainConfig {
  int stage1_epochs = 30;
  int stage2_epochs = 20;
  int train_size = 192;
  int val_size = 16;
  int image_size = 64;
  int batch = 8;
  double lr = 1e-4;
  int lr_decay_every = 10;      // stage 2: polynomial decay step, in epochs
  double lr_decay_power = 1.0;
  double lr_floor_frac = 0.05;
  double grad_clip = 1.0;
  double divergence_threshold = 1e4;
  std::uint64_t seed = 1;
  int infoflow_every = 5;   // epochs between MI probes; 0 disables
  int infoflow_images = 48;
  int mi_clusters = 16;

  void validate(int downsample_factor) const;
};

struct LossReport {
  double total = 0.0;
  double rate_bpp = 0.0;
  std::vector<double> layer_bits;
  double hyper_bits = 0.0;
  double d_recon = 0.0;             // MSE in 255-scaled units
  std::map<int, double> d_task;     // by layer index
};

/// RD-Lagrangian loss on one image, training mode (additive-noise
/// quantization surrogate). Returns the scalar loss node plus a value
/// report; backward is the caller's job.
std::pair<nn::Var, LossReport> compute_loss(nn::Tape& t, const Tensor& image, model::ScalableModel& model,
                                            const tasks::BackendRegistry& registry,
                                            const LossWeights& weights, nn::Rng& noise_rng);

/// One line per epoch in the metrics log.
struct TrainRecord {
  int epoch = 0;        // global epoch index, 1-based
  int stage = 1;
  double lr = 0.0;
  double loss = 0.0;
  double bpp = 0.0;     // validation, eval-quantized
  double psnr = 0.0;    // validation
  std::vector<double> layer_bits;
  double hyper_bits = 0.0;
  std::vector<double> mi_per_layer;      // empty when not probed
  std::vector<double> share_percent;     // layers + hyper
  std::uint64_t config_hash = 0;
};

std::string to_json_line(const TrainRecord& r);
TrainRecord train_record_from_json(const std::string& line);
std::vector<TrainRecord> read_metrics_log(const std::filesystem::path& path);

struct EvalSummary {
  double bpp = 0.0;   // estimated bits on eval-quantized latents / pixels
  double psnr = 0.0;
  std::vector<double> layer_bits;  // mean per image
  double hyper_bits = 0.0;
  double base_latent_share = 0.0;             // layer-1 bits / latent bits
  std::vector<double> share_percent;          // layers + hyper, of total
  std::map<std::string, double> task_scores_latent;  // via LST, no synthesis
  std::map<std::string, double> task_scores_pixel;   // decode-then-infer
};

EvalSummary evaluate_model(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                           const std::vector<data::Sample>& samples, bool with_tasks = true);

struct TrainResult {
  std::vector<TrainRecord> records;
  bool diverged = false;
  int epochs_run = 0;
};

/// Two-stage training: stage 1 on corpus A at fixed lr, stage 2 on corpus
/// B with polynomial lr decay every `lr_decay_every` epochs. Emits one
/// metrics record per epoch (and MI probes on schedule). On divergence the
/// last good epoch's weights are restored.
TrainResult train(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                  const TrainConfig& cfg, const LossWeights& weights,
                  const std::filesystem::path& metrics_log_path = {});

/// Post-hoc task extension: trains only the LST attached at `layer`
/// (existing prefix or the full latent), leaving the encoder untouched.
void train_lst_only(model::ScalableModel& model, const tasks::BackendRegistry& registry, int layer,
                    const TrainConfig& cfg);

double polynomial_lr(const TrainConfig& cfg, int stage2_epoch);

}  // namespace lsc::train
