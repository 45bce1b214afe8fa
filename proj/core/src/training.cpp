#include "lsc/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lsc/infoflow.h"

namespace lsc::train {

using nn::Tape;
using nn::Var;

namespace {
constexpr double kPixelScale = 255.0 * 255.0;  // MSE in 8-bit units
}

double LossWeights::default_gamma(model::NetworkType type) {
  return type == model::NetworkType::two_layer ? 0.006 : 0.0015;
}

void LossWeights::validate() const {
  LSC_CHECK(lambda > 0.0, invalid_argument, "lambda must be positive");
  for (double g : gamma) LSC_CHECK(g > 0.0, invalid_argument, "gamma values must be positive");
}

void TrainConfig::validate(int downsample_factor) const {
  LSC_CHECK(image_size % downsample_factor == 0, invalid_argument,
            "training image size must be divisible by the downsampling factor");
  LSC_CHECK(stage1_epochs >= 0 && stage2_epochs >= 0 && batch >= 1, invalid_argument,
            "bad schedule parameters");
}

std::pair<Var, LossReport> compute_loss(Tape& t, const Tensor& image, model::ScalableModel& model,
                                        const tasks::BackendRegistry& registry, const LossWeights& weights,
                                        nn::Rng& noise_rng) {
  const auto& spec = model.layers();
  LossReport rep;

  Var x = t.constant(image);
  Var y = model.transform().analysis(t, x);
  const Tensor& yv = t.value(y);
  const int n = yv.h(), m = yv.w();

  // Additive-noise quantization surrogate for both latent and hyper-latent.
  Tensor ynoise(yv.dims());
  for (std::int64_t i = 0; i < ynoise.size(); ++i) ynoise[i] = noise_rng.uniform(-0.5, 0.5);
  Var ytilde = add(y, t.constant(ynoise));

  Var z = model.entropy().hyper_analysis(t, y);
  const Tensor& zv = t.value(z);
  Tensor znoise(zv.dims());
  for (std::int64_t i = 0; i < znoise.size(); ++i) znoise[i] = noise_rng.uniform(-0.5, 0.5);
  Var ztilde = add(z, t.constant(znoise));

  Var h_full = model.entropy().hyper_synthesis(t, ztilde, n, m);

  Var total_bits;
  for (int j = 0; j < spec.num_layers(); ++j) {
    Var yj = slice_c(ytilde, spec.layer_offset(j), spec.channel_counts[j]);
    Var ctx = model.entropy().context(t, yj, j);
    Var hj = model.entropy().hyper_slice(t, h_full, j);
    auto [mu, sigma] = model.entropy().entropy_parameters(t, ctx, hj, j);
    Var bits = sum(gaussian_bin_bits(yj, mu, sigma));
    rep.layer_bits.push_back(t.value(bits)[0]);
    total_bits = j == 0 ? bits : add(total_bits, bits);
  }
  Var hyper_bits = sum(model.entropy().prior().bits_map(t, ztilde));
  rep.hyper_bits = t.value(hyper_bits)[0];
  total_bits = add(total_bits, hyper_bits);
  const double pixels = static_cast<double>(image.h()) * image.w();
  Var rate_bpp = scale(total_bits, 1.0 / pixels);
  rep.rate_bpp = t.value(rate_bpp)[0];

  Var xhat = model.transform().synthesis(t, ytilde);
  Var d_recon = scale(mse(x, xhat), kPixelScale);
  rep.d_recon = t.value(d_recon)[0];
  Var distortion = d_recon;

  const auto variant = model.config().network_type == model::NetworkType::two_layer
                           ? tasks::DistortionVariant::through_backend_stub
                           : tasks::DistortionVariant::multi_tap;
  int task_index = 0;
  for (int j = 0; j < spec.num_layers(); ++j) {
    if (!model.has_lst(j)) continue;
    const tasks::TaskBackend& backend = registry.at(model.task_at(j));
    // Target features come from the clean input through the frozen
    // front-end; computed off-tape so the target branch is constant.
    Tensor f_target;
    {
      Tape ft;
      f_target = ft.value(backend.front_end(ft, ft.constant(image)));
    }
    Var prefix = slice_c(ytilde, 0, spec.prefix_channels(j + 1));
    Var f_est = model.lst(j).forward(t, prefix);
    Var fd = tasks::feature_distortion(t, f_est, t.constant(f_target), backend, variant);
    const double g = task_index < static_cast<int>(weights.gamma.size())
                         ? weights.gamma[task_index]
                         : LossWeights::default_gamma(model.config().network_type);
    rep.d_task[j] = t.value(fd)[0];
    distortion = add(distortion, scale(fd, g));
    ++task_index;
  }

  Var total = add(rate_bpp, scale(distortion, weights.lambda));
  rep.total = t.value(total)[0];
  LSC_CHECK(std::isfinite(rep.total), numeric, "non-finite training loss");
  return {total, rep};
}

// ---------------------------------------------------------------------------
// Metrics log
// ---------------------------------------------------------------------------

namespace {
std::string json_array(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(12);
  os << "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  os << "]";
  return os.str();
}

std::vector<double> parse_array(const std::string& s, std::size_t& pos) {
  std::vector<double> out;
  while (pos < s.size() && s[pos] != '[') ++pos;
  ++pos;
  while (pos < s.size() && s[pos] != ']') {
    std::size_t next = pos;
    double v = std::stod(s.substr(pos), &next);
    out.push_back(v);
    pos += next;
    while (pos < s.size() && (s[pos] == ',' || s[pos] == ' ')) ++pos;
  }
  ++pos;
  return out;
}

double parse_field(const std::string& line, const std::string& key) {
  auto p = line.find("\"" + key + "\":");
  LSC_CHECK(p != std::string::npos, corrupt_stream, "metrics line missing field " + key);
  p += key.size() + 3;
  return std::stod(line.substr(p));
}
}  // namespace

std::string to_json_line(const TrainRecord& r) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"epoch\":" << r.epoch << ",\"stage\":" << r.stage << ",\"lr\":" << r.lr
     << ",\"loss\":" << r.loss << ",\"bpp\":" << r.bpp << ",\"psnr\":" << r.psnr
     << ",\"layer_bits\":" << json_array(r.layer_bits) << ",\"hyper_bits\":" << r.hyper_bits
     << ",\"mi\":" << json_array(r.mi_per_layer) << ",\"share\":" << json_array(r.share_percent)
     << ",\"config_hash\":\"" << std::hex << r.config_hash << std::dec << "\"}";
  return os.str();
}

TrainRecord train_record_from_json(const std::string& line) {
  TrainRecord r;
  r.epoch = static_cast<int>(parse_field(line, "epoch"));
  r.stage = static_cast<int>(parse_field(line, "stage"));
  r.lr = parse_field(line, "lr");
  r.loss = parse_field(line, "loss");
  r.bpp = parse_field(line, "bpp");
  r.psnr = parse_field(line, "psnr");
  r.hyper_bits = parse_field(line, "hyper_bits");
  auto arr_at = [&line](const std::string& key) {
    auto p = line.find("\"" + key + "\":");
    LSC_CHECK(p != std::string::npos, corrupt_stream, "metrics line missing field " + key);
    std::size_t pos = p + key.size() + 3;
    return parse_array(line, pos);
  };
  r.layer_bits = arr_at("layer_bits");
  r.mi_per_layer = arr_at("mi");
  r.share_percent = arr_at("share");
  auto p = line.find("\"config_hash\":\"");
  LSC_CHECK(p != std::string::npos, corrupt_stream, "metrics line missing config hash");
  r.config_hash = std::stoull(line.substr(p + 15), nullptr, 16);
  return r;
}

std::vector<TrainRecord> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  LSC_CHECK(f.good(), not_found, "cannot open metrics log " + path.string());
  std::vector<TrainRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(train_record_from_json(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalSummary evaluate_model(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                           const std::vector<data::Sample>& samples, bool with_tasks) {
  LSC_CHECK(!samples.empty(), invalid_argument, "empty evaluation set");
  const auto& spec = model.layers();
  EvalSummary s;
  s.layer_bits.assign(static_cast<std::size_t>(spec.num_layers()), 0.0);
  std::map<std::string, double> latent_acc, pixel_acc;

  double total_bits_all = 0.0, pixels_all = 0.0, psnr_acc = 0.0;
  for (const auto& sample : samples) {
    codec::Image img = codec::make_image(sample.image, std::to_string(sample.sample_id));
    Tensor y = codec::analysis_encode(img, model.transform());
    const int n = y.h(), m = y.w();
    Tensor z = model.entropy().hyper_analysis_eval(y);
    Tensor zhat = codec::quantize(z, Tensor(z.dims(), 0.0), codec::QuantMode::eval);
    Tensor h_full = model.entropy().hyper_synthesis_eval(zhat, n, m);

    Tensor yhat = Tensor::hwc(n, m, spec.total_channels());
    std::vector<Tensor> yhat_layers;
    for (int j = 0; j < spec.num_layers(); ++j) {
      Tensor yj = Tensor::hwc(n, m, spec.channel_counts[j]);
      const int off = spec.layer_offset(j);
      for (int yy = 0; yy < n; ++yy)
        for (int xx = 0; xx < m; ++xx)
          for (int c = 0; c < spec.channel_counts[j]; ++c) yj.at(yy, xx, c) = y.at(yy, xx, off + c);
      auto q = entropy::autoregressive_quantize(yj, model.entropy(), h_full, j);
      const double bits = entropy::gaussian_bits_total(q.yhat, {q.mu, q.sigma});
      s.layer_bits[j] += bits;
      total_bits_all += bits;
      for (int yy = 0; yy < n; ++yy)
        for (int xx = 0; xx < m; ++xx)
          for (int c = 0; c < spec.channel_counts[j]; ++c) yhat.at(yy, xx, off + c) = q.yhat.at(yy, xx, c);
      yhat_layers.push_back(q.yhat);
    }
    double zb = 0.0;
    {
      Tape t;
      zb = t.value(sum(model.entropy().prior().bits_map(t, t.constant(zhat))))[0];
    }
    s.hyper_bits += zb;
    total_bits_all += zb;
    pixels_all += static_cast<double>(img.pixels.h()) * img.pixels.w();

    codec::Image rec = codec::synthesis_decode(yhat, model.transform());
    double err = 0.0;
    for (std::int64_t i = 0; i < rec.pixels.size(); ++i) {
      const double d = rec.pixels[i] - img.pixels[i];
      err += d * d;
    }
    err /= static_cast<double>(rec.pixels.size());
    psnr_acc += err <= 0.0 ? 99.0 : 10.0 * std::log10(1.0 / err);

    if (with_tasks && !spec.task_bindings.empty()) {
      for (int j = 0; j < spec.num_layers(); ++j) {
        if (!model.has_lst(j)) continue;
        const tasks::TaskBackend& backend = registry.at(model.task_at(j));
        Tensor prefix = Tensor::hwc(n, m, spec.prefix_channels(j + 1));
        for (int yy = 0; yy < n; ++yy)
          for (int xx = 0; xx < m; ++xx)
            for (int c = 0; c < prefix.c(); ++c) prefix.at(yy, xx, c) = yhat.at(yy, xx, c);
        Tape t;
        Tensor f_est = t.value(model.lst(j).forward(t, t.constant(prefix)));
        tasks::TaskOutput latent_out = backend.infer_from_features(f_est);
        latent_acc[backend.id()] += backend.score(latent_out, sample);
        tasks::TaskOutput pixel_out = backend.infer_from_image(rec.pixels);
        pixel_acc[backend.id()] += backend.score(pixel_out, sample);
      }
    }
  }

  const double ns = static_cast<double>(samples.size());
  s.bpp = total_bits_all / pixels_all;
  s.psnr = psnr_acc / ns;
  for (double& b : s.layer_bits) b /= ns;
  s.hyper_bits /= ns;
  entropy::RateReport rr;
  rr.layer_bits = s.layer_bits;
  rr.hyper_bits = s.hyper_bits;
  rr.pixel_count = 1;
  s.base_latent_share = rr.base_latent_share();
  s.share_percent = rr.shares_of_total();
  for (auto& [k, v] : latent_acc) s.task_scores_latent[k] = v / ns;
  for (auto& [k, v] : pixel_acc) s.task_scores_pixel[k] = v / ns;
  return s;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

double polynomial_lr(const TrainConfig& cfg, int stage2_epoch) {
  if (stage2_epoch <= 0 || cfg.lr_decay_every <= 0) return cfg.lr;
  const int steps_total = std::max(1, (cfg.stage2_epochs + cfg.lr_decay_every - 1) / cfg.lr_decay_every);
  const int step = std::min(stage2_epoch / cfg.lr_decay_every, steps_total);
  const double frac = 1.0 - static_cast<double>(step) / (steps_total + 1);
  const double lr = cfg.lr * std::pow(frac, cfg.lr_decay_power);
  return std::max(lr, cfg.lr * cfg.lr_floor_frac);
}

namespace {

struct ParamSnapshot {
  std::vector<Tensor> values;
  void capture(const std::vector<nn::Parameter*>& params) {
    values.clear();
    for (auto* p : params) values.push_back(p->value);
  }
  void restore(const std::vector<nn::Parameter*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

}  // namespace

TrainResult train(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                  const TrainConfig& cfg, const LossWeights& weights,
                  const std::filesystem::path& metrics_log_path) {
  cfg.validate(model.transform().config().downsample_factor());
  weights.validate();

  auto corpus_a = data::ShapesParams::corpus_a(cfg.image_size);
  auto corpus_b = data::ShapesParams::corpus_b(cfg.image_size);
  auto stage1 = data::make_dataset(corpus_a, cfg.seed, cfg.train_size);
  auto stage2 = data::make_dataset(corpus_b, cfg.seed + 1, cfg.train_size);
  auto val = data::make_dataset(corpus_a, cfg.seed, cfg.val_size, data::kValSplitOffset);
  auto mi_set = cfg.infoflow_every > 0
                    ? data::make_dataset(corpus_a, cfg.seed, cfg.infoflow_images,
                                         data::kValSplitOffset + (1 << 16))
                    : std::vector<data::Sample>{};

  auto params = model.trainable_params();
  nn::Adam opt(params, cfg.lr);
  nn::Rng noise_rng(nn::derive_seed(cfg.seed, 0x4015e));
  nn::Rng order_rng(nn::derive_seed(cfg.seed, 0x0bde5));

  std::ofstream log;
  if (!metrics_log_path.empty()) {
    if (metrics_log_path.has_parent_path()) std::filesystem::create_directories(metrics_log_path.parent_path());
    log.open(metrics_log_path, std::ios::trunc);
    LSC_CHECK(log.good(), not_found, "cannot open metrics log for writing");
  }

  TrainResult result;
  ParamSnapshot last_good;
  last_good.capture(params);

  const int total_epochs = cfg.stage1_epochs + cfg.stage2_epochs;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const int stage = epoch < cfg.stage1_epochs ? 1 : 2;
    auto& dataset = stage == 1 ? stage1 : stage2;
    const double lr = stage == 1 ? cfg.lr : polynomial_lr(cfg, epoch - cfg.stage1_epochs);
    opt.set_lr(lr);

    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), order_rng.engine());

    double epoch_loss = 0.0;
    int steps = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size() && !diverged; start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      opt.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        Tape t;
        auto [loss, rep] = compute_loss(t, dataset[order[i]].image, model, registry, weights, noise_rng);
        batch_loss += rep.total;
        t.backward(scale(loss, 1.0 / static_cast<double>(stop - start)));
      }
      batch_loss /= static_cast<double>(stop - start);
      if (!std::isfinite(batch_loss) || batch_loss > cfg.divergence_threshold) {
        diverged = true;
        break;
      }
      opt.clip_global_grad_norm(cfg.grad_clip);
      opt.step();
      model.project();
      epoch_loss += batch_loss;
      ++steps;
    }

    if (diverged) {
      last_good.restore(params);
      model.project();
      result.diverged = true;
      break;
    }
    last_good.capture(params);
    model.epochs_completed = epoch + 1;
    result.epochs_run = epoch + 1;

    TrainRecord rec;
    rec.epoch = epoch + 1;
    rec.stage = stage;
    rec.lr = lr;
    rec.loss = steps > 0 ? epoch_loss / steps : 0.0;
    rec.config_hash = model.config_hash;

    EvalSummary ev = evaluate_model(model, registry, val, /*with_tasks=*/false);
    rec.bpp = ev.bpp;
    rec.psnr = ev.psnr;
    rec.layer_bits = ev.layer_bits;
    rec.hyper_bits = ev.hyper_bits;
    rec.share_percent = ev.share_percent;

    const bool probe = cfg.infoflow_every > 0 &&
                       ((epoch + 1) % cfg.infoflow_every == 0 || epoch == 0 || epoch == total_epochs - 1);
    if (probe && !mi_set.empty()) {
      auto mi = info::measure_model_mi(model, registry, mi_set, cfg.mi_clusters,
                                       nn::derive_seed(cfg.seed, 0x3141),
                                       info::MiEstimator::kde);
      for (const auto& r : mi) rec.mi_per_layer.push_back(r.mi_clamped);
    }

    result.records.push_back(rec);
    if (log.is_open()) log << to_json_line(rec) << "\n" << std::flush;
  }

  model.lambda = weights.lambda;
  return result;
}

void train_lst_only(model::ScalableModel& model, const tasks::BackendRegistry& registry, int layer,
                    const TrainConfig& cfg) {
  LSC_CHECK(model.has_lst(layer), not_found, "no LST at the requested layer");
  const auto& spec = model.layers();
  const tasks::TaskBackend& backend = registry.at(model.task_at(layer));
  auto corpus = data::ShapesParams::corpus_a(cfg.image_size);
  auto dataset = data::make_dataset(corpus, cfg.seed, cfg.train_size);

  std::vector<nn::Parameter*> params;
  model.lst(layer).collect(params);
  nn::Adam opt(params, cfg.lr);
  nn::Rng order_rng(nn::derive_seed(cfg.seed, 0x157));

  const int epochs = cfg.stage1_epochs;
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      opt.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const auto& sample = dataset[order[i]];
        codec::Image img = codec::make_image(sample.image);
        Tensor y = codec::analysis_encode(img, model.transform());
        Tensor z = model.entropy().hyper_analysis_eval(y);
        Tensor zhat = codec::quantize(z, Tensor(z.dims(), 0.0), codec::QuantMode::eval);
        Tensor h_full = model.entropy().hyper_synthesis_eval(zhat, y.h(), y.w());
        Tensor prefix = Tensor::hwc(y.h(), y.w(), spec.prefix_channels(layer + 1));
        int off = 0;
        for (int j = 0; j <= layer; ++j) {
          Tensor yj = Tensor::hwc(y.h(), y.w(), spec.channel_counts[j]);
          const int loff = spec.layer_offset(j);
          for (int yy = 0; yy < y.h(); ++yy)
            for (int xx = 0; xx < y.w(); ++xx)
              for (int c = 0; c < spec.channel_counts[j]; ++c) yj.at(yy, xx, c) = y.at(yy, xx, loff + c);
          auto q = entropy::autoregressive_quantize(yj, model.entropy(), h_full, j);
          for (int yy = 0; yy < y.h(); ++yy)
            for (int xx = 0; xx < y.w(); ++xx)
              for (int c = 0; c < spec.channel_counts[j]; ++c)
                prefix.at(yy, xx, off + c) = q.yhat.at(yy, xx, c);
          off += spec.channel_counts[j];
        }
        Tensor f_target;
        {
          Tape ft;
          f_target = ft.value(backend.front_end(ft, ft.constant(sample.image)));
        }
        Tape t;
        Var f_est = model.lst(layer).forward(t, t.constant(prefix));
        Var loss = mse(f_est, t.constant(f_target));
        t.backward(scale(loss, 1.0 / static_cast<double>(stop - start)));
      }
      opt.clip_global_grad_norm(cfg.grad_clip);
      opt.step();
      model.lst(layer).project();
    }
  }
}

}  // namespace lsc::train
