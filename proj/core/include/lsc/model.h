#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lsc/codec.h"
#include "lsc/entropy.h"
#include "lsc/tasks.h"

namespace lsc::model {

/// Selects the feature-distortion variant and its stock gamma.
enum class NetworkType { two_layer, three_layer };

struct ModelConfig {
  codec::CodecConfig transform;
  entropy::EntropyConfig entropy;
  codec::LayerSpec layers;
  int lst_width = 32;
  int lst_sets = 4;
  NetworkType network_type = NetworkType::two_layer;
  std::uint64_t seed = 1;
};

/// The full coding system: transforms, entropy models, and one LST per
/// task-bound layer prefix. Task back-ends are owned by the registry and
/// stay frozen.
class ScalableModel {
 public:
  ScalableModel() = default;
  ScalableModel(const ModelConfig& cfg, const tasks::BackendRegistry& registry);

  const ModelConfig& config() const { return cfg_; }
  codec::TransformModel& transform() { return transform_; }
  const codec::TransformModel& transform() const { return transform_; }
  entropy::EntropyModel& entropy() { return entropy_; }
  const entropy::EntropyModel& entropy() const { return entropy_; }
  const codec::LayerSpec& layers() const { return cfg_.layers; }

  bool has_lst(int layer) const;
  const tasks::Lst& lst(int layer) const;
  tasks::Lst& lst(int layer);
  const std::string& task_at(int layer) const;
  /// Adds an LST over the prefix ending at `layer` for a new task
  /// (post-hoc extension; the encoder itself is untouched).
  void attach_lst(int layer, const std::string& task_id, const tasks::TaskBackend& backend,
                  std::uint64_t seed);

  std::vector<nn::Parameter*> trainable_params();
  std::vector<nn::Parameter*> encoder_params();  // transform + entropy only
  std::vector<nn::Parameter*> lst_params();
  void project();

  std::uint64_t weights_fingerprint();
  std::uint64_t encoder_fingerprint();
  /// Identifies (config, weights); embedded in bitstreams so decoding
  /// with a mismatched checkpoint is refused.
  std::uint64_t model_hash();

  int epochs_completed = 0;
  double lambda = 0.0;
  std::uint64_t config_hash = 0;

 private:
  ModelConfig cfg_;
  codec::TransformModel transform_;
  entropy::EntropyModel entropy_;
  std::vector<std::unique_ptr<tasks::Lst>> lsts_;  // indexed by layer
};

/// Versioned checkpoint with the full config, training metadata, and all
/// parameter tensors by name.
void save_checkpoint(const std::filesystem::path& path, ScalableModel& model);
ScalableModel load_checkpoint(const std::filesystem::path& path, const tasks::BackendRegistry& registry);

void save_backend_params(const std::filesystem::path& path, tasks::TaskBackend& backend);
void load_backend_params(const std::filesystem::path& path, tasks::TaskBackend& backend);

/// Binary serialization of ModelConfig (also hashed into config_hash when
/// no run-level config is present).
std::vector<std::uint8_t> serialize_model_config(const ModelConfig& cfg);
ModelConfig deserialize_model_config(const std::uint8_t* data, std::size_t size);

}  // namespace lsc::model
