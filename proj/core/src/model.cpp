#include "lsc/model.h"

#include <cstring>
#include <map>

#include "lsc/io.h"

namespace lsc::model {

namespace {

tasks::LstConfig lst_config_for(const ModelConfig& cfg, int layer, const tasks::TaskBackend& backend) {
  tasks::LstConfig lc;
  lc.input_channels = cfg.layers.prefix_channels(layer + 1);
  lc.output_channels = backend.feature_channels();
  lc.width = cfg.lst_width;
  lc.scale_factors = tasks::LstConfig::scales_for_upscale(backend.feature_upscale(), cfg.lst_sets);
  lc.final_activation = backend.final_activation();
  return lc;
}

}  // namespace

ScalableModel::ScalableModel(const ModelConfig& cfg, const tasks::BackendRegistry& registry) : cfg_(cfg) {
  cfg_.layers.validate(cfg.transform.latent_channels);
  nn::Rng rng(cfg.seed);
  transform_ = codec::TransformModel(cfg.transform, rng);
  entropy_ = entropy::EntropyModel(cfg_.layers, cfg.transform.latent_channels, cfg.entropy, rng);
  lsts_.resize(static_cast<std::size_t>(cfg_.layers.num_layers()));
  if (!cfg_.layers.task_bindings.empty()) {
    for (int j = 0; j < cfg_.layers.num_layers(); ++j) {
      const std::string& task = cfg_.layers.task_bindings[j];
      if (task.empty()) continue;
      const tasks::TaskBackend& backend = registry.at(task);
      lsts_[j] = std::make_unique<tasks::Lst>("lst" + std::to_string(j), lst_config_for(cfg_, j, backend),
                                              rng);
    }
  }
  config_hash = io::fnv1a64(serialize_model_config(cfg_).data(), serialize_model_config(cfg_).size());
}

bool ScalableModel::has_lst(int layer) const {
  return layer >= 0 && layer < static_cast<int>(lsts_.size()) && lsts_[layer] != nullptr;
}

const tasks::Lst& ScalableModel::lst(int layer) const {
  LSC_CHECK(has_lst(layer), not_found, "no task bound at layer " + std::to_string(layer + 1));
  return *lsts_[layer];
}

tasks::Lst& ScalableModel::lst(int layer) {
  LSC_CHECK(has_lst(layer), not_found, "no task bound at layer " + std::to_string(layer + 1));
  return *lsts_[layer];
}

const std::string& ScalableModel::task_at(int layer) const {
  LSC_CHECK(!cfg_.layers.task_bindings.empty() && layer >= 0 && layer < cfg_.layers.num_layers(),
            not_found, "layer has no binding");
  return cfg_.layers.task_bindings[layer];
}

void ScalableModel::attach_lst(int layer, const std::string& task_id, const tasks::TaskBackend& backend,
                               std::uint64_t seed) {
  LSC_CHECK(layer >= 0 && layer < cfg_.layers.num_layers(), invalid_argument, "layer out of range");
  LSC_CHECK(!has_lst(layer), invalid_argument, "layer already has an LST");
  if (cfg_.layers.task_bindings.empty())
    cfg_.layers.task_bindings.assign(static_cast<std::size_t>(cfg_.layers.num_layers()), "");
  cfg_.layers.task_bindings[layer] = task_id;
  nn::Rng rng(seed);
  lsts_[layer] = std::make_unique<tasks::Lst>("lst" + std::to_string(layer),
                                              lst_config_for(cfg_, layer, backend), rng);
}

std::vector<nn::Parameter*> ScalableModel::trainable_params() {
  std::vector<nn::Parameter*> out = encoder_params();
  auto ls = lst_params();
  out.insert(out.end(), ls.begin(), ls.end());
  return out;
}

std::vector<nn::Parameter*> ScalableModel::encoder_params() {
  std::vector<nn::Parameter*> out;
  transform_.collect(out);
  entropy_.collect(out);
  return out;
}

std::vector<nn::Parameter*> ScalableModel::lst_params() {
  std::vector<nn::Parameter*> out;
  for (auto& l : lsts_)
    if (l) l->collect(out);
  return out;
}

void ScalableModel::project() {
  transform_.project();
  for (auto& l : lsts_)
    if (l) l->project();
}

std::uint64_t ScalableModel::weights_fingerprint() {
  auto ps = trainable_params();
  return nn::params_fingerprint(ps);
}

std::uint64_t ScalableModel::encoder_fingerprint() {
  auto ps = encoder_params();
  return nn::params_fingerprint(ps);
}

std::uint64_t ScalableModel::model_hash() {
  std::uint64_t both[2] = {config_hash, weights_fingerprint()};
  return io::fnv1a64(both, sizeof(both));
}

std::vector<std::uint8_t> serialize_model_config(const ModelConfig& cfg) {
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(cfg.transform.stages));
  w.u32(static_cast<std::uint32_t>(cfg.transform.hidden));
  w.u32(static_cast<std::uint32_t>(cfg.transform.latent_channels));
  w.u32(static_cast<std::uint32_t>(cfg.transform.kernel));
  w.f64(cfg.transform.beta_min);
  w.u32(static_cast<std::uint32_t>(cfg.entropy.hyper_hidden));
  w.u32(static_cast<std::uint32_t>(cfg.entropy.hyper_channels));
  w.f64(cfg.entropy.sigma_min);
  w.u32(static_cast<std::uint32_t>(cfg.entropy.ctx_kernel));
  w.u32(static_cast<std::uint32_t>(cfg.entropy.ep_kernel));
  w.f64(cfg.entropy.lrelu_slope);
  w.u32(static_cast<std::uint32_t>(cfg.layers.channel_counts.size()));
  for (int c : cfg.layers.channel_counts) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(cfg.layers.task_bindings.size()));
  for (const auto& s : cfg.layers.task_bindings) {
    w.u16(static_cast<std::uint16_t>(s.size()));
    w.bytes(s.data(), s.size());
  }
  w.u32(static_cast<std::uint32_t>(cfg.lst_width));
  w.u32(static_cast<std::uint32_t>(cfg.lst_sets));
  w.u8(cfg.network_type == NetworkType::two_layer ? 2 : 3);
  w.u64(cfg.seed);
  return w.take();
}

ModelConfig deserialize_model_config(const std::uint8_t* data, std::size_t size) {
  io::ByteReader r(data, size);
  ModelConfig cfg;
  cfg.transform.stages = static_cast<int>(r.u32());
  cfg.transform.hidden = static_cast<int>(r.u32());
  cfg.transform.latent_channels = static_cast<int>(r.u32());
  cfg.transform.kernel = static_cast<int>(r.u32());
  cfg.transform.beta_min = r.f64();
  cfg.entropy.hyper_hidden = static_cast<int>(r.u32());
  cfg.entropy.hyper_channels = static_cast<int>(r.u32());
  cfg.entropy.sigma_min = r.f64();
  cfg.entropy.ctx_kernel = static_cast<int>(r.u32());
  cfg.entropy.ep_kernel = static_cast<int>(r.u32());
  cfg.entropy.lrelu_slope = r.f64();
  const auto nlayers = r.u32();
  for (std::uint32_t i = 0; i < nlayers; ++i) cfg.layers.channel_counts.push_back(static_cast<int>(r.u32()));
  const auto nbind = r.u32();
  for (std::uint32_t i = 0; i < nbind; ++i) {
    std::string s(r.u16(), '\0');
    r.bytes(s.data(), s.size());
    cfg.layers.task_bindings.push_back(std::move(s));
  }
  cfg.lst_width = static_cast<int>(r.u32());
  cfg.lst_sets = static_cast<int>(r.u32());
  cfg.network_type = r.u8() == 2 ? NetworkType::two_layer : NetworkType::three_layer;
  cfg.seed = r.u64();
  return cfg;
}

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'S', 'C', 'K'};
constexpr std::uint8_t kCheckpointVersion = 1;

void write_params(io::ByteWriter& w, const std::vector<nn::Parameter*>& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const nn::Parameter* p : params) {
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.u8(static_cast<std::uint8_t>(p->value.rank()));
    for (int d : p->value.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < p->value.size(); ++i) w.f64(p->value[i]);
  }
}

void read_params(io::ByteReader& r, const std::vector<nn::Parameter*>& params) {
  std::map<std::string, nn::Parameter*> by_name;
  for (nn::Parameter* p : params) by_name[p->name] = p;
  const auto count = r.u32();
  LSC_CHECK(count == params.size(), corrupt_stream, "checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.u16(), '\0');
    r.bytes(name.data(), name.size());
    auto it = by_name.find(name);
    LSC_CHECK(it != by_name.end(), corrupt_stream, "unknown parameter in checkpoint: " + name);
    nn::Parameter* p = it->second;
    const int rank = r.u8();
    std::vector<int> dims;
    for (int d = 0; d < rank; ++d) dims.push_back(static_cast<int>(r.u32()));
    LSC_CHECK(dims == p->value.dims(), corrupt_stream, "parameter shape mismatch: " + name);
    for (std::int64_t k = 0; k < p->value.size(); ++k) p->value[k] = r.f64();
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ScalableModel& model) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u8(kCheckpointVersion);
  auto cfg_blob = serialize_model_config(model.config());
  w.u32(static_cast<std::uint32_t>(cfg_blob.size()));
  w.bytes(cfg_blob.data(), cfg_blob.size());
  w.u64(model.config_hash);
  w.u32(static_cast<std::uint32_t>(model.epochs_completed));
  w.f64(model.lambda);
  auto params = model.trainable_params();
  write_params(w, params);
  const auto& buf = w.buffer();
  io::write_file_atomic(path, buf.data(), buf.size());
}

ScalableModel load_checkpoint(const std::filesystem::path& path, const tasks::BackendRegistry& registry) {
  auto bytes = io::read_file(path);
  io::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  LSC_CHECK(std::memcmp(magic, kCheckpointMagic, 4) == 0, corrupt_stream, "not a checkpoint file");
  LSC_CHECK(r.u8() == kCheckpointVersion, unsupported, "checkpoint version mismatch");
  const auto blob_size = r.u32();
  std::vector<std::uint8_t> blob(blob_size);
  r.bytes(blob.data(), blob.size());
  ModelConfig cfg = deserialize_model_config(blob.data(), blob.size());
  ScalableModel model(cfg, registry);
  model.config_hash = r.u64();
  model.epochs_completed = static_cast<int>(r.u32());
  model.lambda = r.f64();
  auto params = model.trainable_params();
  read_params(r, params);
  model.project();
  return model;
}

void save_backend_params(const std::filesystem::path& path, tasks::TaskBackend& backend) {
  io::ByteWriter w;
  w.bytes("LSCB", 4);
  w.u8(1);
  std::vector<nn::Parameter*> params;
  backend.collect(params);
  write_params(w, params);
  const auto& buf = w.buffer();
  io::write_file_atomic(path, buf.data(), buf.size());
}

void load_backend_params(const std::filesystem::path& path, tasks::TaskBackend& backend) {
  auto bytes = io::read_file(path);
  io::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  LSC_CHECK(std::memcmp(magic, "LSCB", 4) == 0, corrupt_stream, "not a backend parameter file");
  LSC_CHECK(r.u8() == 1, unsupported, "backend file version mismatch");
  std::vector<nn::Parameter*> params;
  backend.collect(params);
  read_params(r, params);
}

}  // namespace lsc::model
