#include "lsc/tasks.h"

#include <algorithm>
#include <cmath>

namespace lsc::tasks {

using nn::Tape;
using nn::Var;

namespace {
constexpr double kLRelu = 0.1;
constexpr double kLn2 = 0.6931471805599453;
constexpr int kCountBins = 4;  // counts 0..3

Var ln_op(Var x) { return scale(log2_clamped(x, 1e-300), kLn2); }

// log-sum-exp over channels with a detached per-position max shift.
Var channel_lse(Tape& t, Var logits) {
  const Tensor& lv = t.value(logits);
  Tensor shift(lv.dims());
  Tensor shift1 = Tensor::hwc(lv.h(), lv.w(), 1);
  for (int i = 0; i < lv.h(); ++i)
    for (int j = 0; j < lv.w(); ++j) {
      double m = lv.at(i, j, 0);
      for (int k = 1; k < lv.c(); ++k) m = std::max(m, lv.at(i, j, k));
      shift1.at(i, j, 0) = m;
      for (int k = 0; k < lv.c(); ++k) shift.at(i, j, k) = m;
    }
  Var shifted = sub(logits, t.constant(shift));
  Var lse = ln_op(sum_channels(exp_op(shifted)));
  return add(lse, t.constant(shift1));
}
}  // namespace

TaskOutput TaskBackend::infer_from_image(const Tensor& image) const {
  Tape t;
  Var f = front_end(t, t.constant(image));
  return infer_from_features(t.value(f));
}

std::uint64_t TaskBackend::fingerprint() {
  std::vector<nn::Parameter*> ps;
  collect(ps);
  return nn::params_fingerprint(ps);
}

// ---------------------------------------------------------------------------
// ShapeCountNet
// ---------------------------------------------------------------------------

ShapeCountNet::ShapeCountNet(std::string id, std::string split, nn::Rng& rng)
    : id_(std::move(id)), split_(std::move(split)) {
  LSC_CHECK(split_ == "mid8" || split_ == "mid16", invalid_argument,
            "shape-count split must be mid8 or mid16");
  c1_ = nn::Conv2d(id_ + ".c1", 3, 16, 5, 2, 2, rng);
  c2_ = nn::Conv2d(id_ + ".c2", 16, 24, 5, 2, 2, rng);
  c3_ = nn::Conv2d(id_ + ".c3", 24, 32, 5, 2, 2, rng);
  c4_ = nn::Conv2d(id_ + ".c4", 32, 48, 3, 2, 1, rng);
  fc_ = nn::Conv2d(id_ + ".fc", 48, data::kNumShapeClasses * kCountBins, 1, 1, 0, rng);
  bn_scale_ = nn::Parameter(id_ + ".bn_scale", Tensor({32}, 1.0));
  bn_shift_ = nn::Parameter(id_ + ".bn_shift", Tensor({32}, 0.0));
}

Activation ShapeCountNet::final_activation() const {
  return split_ == "mid8" ? Activation::linear : Activation::leaky_relu;
}
int ShapeCountNet::feature_channels() const { return split_ == "mid8" ? 32 : 24; }
int ShapeCountNet::feature_upscale() const { return split_ == "mid8" ? 2 : 4; }

Var ShapeCountNet::stage2_features(Tape& t, Var image) const {
  Var h = leaky_relu(c1_.forward(t, image), kLRelu);
  return leaky_relu(c2_.forward(t, h), kLRelu);
}

Var ShapeCountNet::conv3_pre(Tape& t, Var act2) const { return c3_.forward(t, act2); }

Var ShapeCountNet::front_end(Tape& t, Var image) const {
  Var act2 = stage2_features(t, image);
  if (split_ == "mid16") return act2;
  return conv3_pre(t, act2);
}

Var ShapeCountNet::backend_stub(Tape& t, Var features) const {
  LSC_CHECK(split_ == "mid8", unsupported, "backend_stub defined for the mid8 split");
  Var a = t.param(const_cast<nn::Parameter&>(bn_scale_));
  Var b = t.param(const_cast<nn::Parameter&>(bn_shift_));
  return leaky_relu(channel_affine(features, a, b), kLRelu);
}

std::vector<std::string> ShapeCountNet::tap_names() const {
  if (split_ == "mid8") return {"norm_act", "c4", "pool", "logits"};
  return {"c3_pre", "norm_act", "c4", "pool", "logits"};
}

std::vector<Var> ShapeCountNet::taps_from_features(Tape& t, Var features) const {
  std::vector<Var> taps;
  Var h = features;
  if (split_ == "mid16") {
    h = conv3_pre(t, h);
    taps.push_back(h);
  }
  Var a = t.param(const_cast<nn::Parameter&>(bn_scale_));
  Var b = t.param(const_cast<nn::Parameter&>(bn_shift_));
  h = leaky_relu(channel_affine(h, a, b), kLRelu);
  taps.push_back(h);
  h = leaky_relu(c4_.forward(t, h), kLRelu);
  taps.push_back(h);
  h = global_avg_pool(h);
  taps.push_back(h);
  h = fc_.forward(t, h);
  taps.push_back(h);
  return taps;
}

Var ShapeCountNet::logits_from_features(Tape& t, Var features) const {
  auto taps = taps_from_features(t, features);
  return taps.back();
}

Var ShapeCountNet::logits_from_image(Tape& t, Var image) const {
  return logits_from_features(t, front_end(t, image));
}

TaskOutput ShapeCountNet::infer_from_features(const Tensor& features) const {
  Tape t;
  Var lg = logits_from_features(t, t.constant(features));
  const Tensor& lv = t.value(lg);
  TaskOutput out;
  out.task_id = id_;
  out.logits.assign(lv.data(), lv.data() + lv.size());
  for (int c = 0; c < data::kNumShapeClasses; ++c) {
    int best = 0;
    for (int k = 1; k < kCountBins; ++k)
      if (out.logits[c * kCountBins + k] > out.logits[c * kCountBins + best]) best = k;
    out.predicted_counts[c] = best;
  }
  return out;
}

double ShapeCountNet::score(const TaskOutput& out, const data::Sample& truth) const {
  double acc = 0.0;
  for (int c = 0; c < data::kNumShapeClasses; ++c)
    acc += out.predicted_counts[c] == truth.counts[c] ? 1.0 : 0.0;
  return acc / data::kNumShapeClasses;
}

void ShapeCountNet::collect(std::vector<nn::Parameter*>& out) {
  c1_.collect(out);
  c2_.collect(out);
  c3_.collect(out);
  c4_.collect(out);
  fc_.collect(out);
  out.push_back(&bn_scale_);
  out.push_back(&bn_shift_);
}

// ---------------------------------------------------------------------------
// ShapeMaskNet
// ---------------------------------------------------------------------------

ShapeMaskNet::ShapeMaskNet(std::string id, nn::Rng& rng) : id_(std::move(id)) {
  c1_ = nn::Conv2d(id_ + ".c1", 3, 16, 5, 2, 2, rng);
  c2_ = nn::Conv2d(id_ + ".c2", 16, 32, 5, 2, 2, rng);
  b1_ = nn::Conv2d(id_ + ".b1", 32, 32, 3, 1, 1, rng);
  b2_ = nn::ConvTranspose2d(id_ + ".b2", 32, 24, 3, 2, 1, 1, rng);
  b3_ = nn::Conv2d(id_ + ".b3", 24, 24, 3, 1, 1, rng);
  b4_ = nn::ConvTranspose2d(id_ + ".b4", 24, 16, 3, 2, 1, 1, rng);
  b5_ = nn::Conv2d(id_ + ".b5", 16, data::kNumShapeClasses + 1, 3, 1, 1, rng);
}

Var ShapeMaskNet::front_end(Tape& t, Var image) const {
  Var h = leaky_relu(c1_.forward(t, image), kLRelu);
  return relu(c2_.forward(t, h));
}

Var ShapeMaskNet::backend_stub(Tape& t, Var features) const {
  return leaky_relu(b1_.forward(t, features), kLRelu);
}

std::vector<std::string> ShapeMaskNet::tap_names() const { return {"b1", "b2", "b3", "b4", "logits"}; }

std::vector<Var> ShapeMaskNet::taps_from_features(Tape& t, Var features) const {
  std::vector<Var> taps;
  Var h = leaky_relu(b1_.forward(t, features), kLRelu);
  taps.push_back(h);
  h = leaky_relu(b2_.forward(t, h), kLRelu);
  taps.push_back(h);
  h = leaky_relu(b3_.forward(t, h), kLRelu);
  taps.push_back(h);
  h = leaky_relu(b4_.forward(t, h), kLRelu);
  taps.push_back(h);
  h = b5_.forward(t, h);
  taps.push_back(h);
  return taps;
}

Var ShapeMaskNet::logits_from_features(Tape& t, Var features) const {
  return taps_from_features(t, features).back();
}

TaskOutput ShapeMaskNet::infer_from_features(const Tensor& features) const {
  Tape t;
  Var lg = logits_from_features(t, t.constant(features));
  const Tensor& lv = t.value(lg);
  TaskOutput out;
  out.task_id = id_;
  out.mask_size = lv.h();
  out.mask.resize(static_cast<std::size_t>(lv.h()) * lv.w());
  for (int i = 0; i < lv.h(); ++i)
    for (int j = 0; j < lv.w(); ++j) {
      int best = 0;
      for (int k = 1; k < lv.c(); ++k)
        if (lv.at(i, j, k) > lv.at(i, j, best)) best = k;
      out.mask[static_cast<std::size_t>(i) * lv.w() + j] = static_cast<std::uint8_t>(best);
    }
  return out;
}

double ShapeMaskNet::score(const TaskOutput& out, const data::Sample& truth) const {
  LSC_CHECK(out.mask.size() == truth.mask.size(), shape_mismatch, "mask size mismatch");
  const int ncls = data::kNumShapeClasses + 1;
  double iou_sum = 0.0;
  for (int c = 0; c < ncls; ++c) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
      const bool p = out.mask[i] == c, g = truth.mask[i] == c;
      inter += p && g;
      uni += p || g;
    }
    iou_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return iou_sum / ncls;
}

void ShapeMaskNet::collect(std::vector<nn::Parameter*>& out) {
  c1_.collect(out);
  c2_.collect(out);
  b1_.collect(out);
  b2_.collect(out);
  b3_.collect(out);
  b4_.collect(out);
  b5_.collect(out);
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

std::string BackendRegistry::register_backend(std::unique_ptr<TaskBackend> backend) {
  LSC_CHECK(backend != nullptr, invalid_argument, "null backend");
  LSC_CHECK(!contains(backend->id()), invalid_argument, "duplicate task id: " + backend->id());
  std::string id = backend->id();
  backends_.push_back(std::move(backend));
  return id;
}

TaskBackend& BackendRegistry::at(const std::string& id) const {
  for (const auto& b : backends_)
    if (b->id() == id) return *b;
  fail(Error::Kind::not_found, "unbound task id: " + id);
}

bool BackendRegistry::contains(const std::string& id) const {
  for (const auto& b : backends_)
    if (b->id() == id) return true;
  return false;
}

std::vector<std::string> BackendRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& b : backends_) out.push_back(b->id());
  return out;
}

// ---------------------------------------------------------------------------
// Latent space transform
// ---------------------------------------------------------------------------

int LstConfig::total_upscale() const {
  int p = 1;
  for (int r : scale_factors) p *= r;
  return p;
}

std::vector<int> LstConfig::scales_for_upscale(int upscale, int num_sets) {
  std::vector<int> scales(static_cast<std::size_t>(num_sets), 1);
  int remaining = upscale;
  for (int i = 0; i < num_sets && remaining > 1; ++i) {
    scales[i] = 2;
    remaining /= 2;
  }
  LSC_CHECK(remaining == 1, invalid_argument, "upscale not reachable with factor-2 sets");
  return scales;
}

Lst::Lst(std::string name, const LstConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  LSC_CHECK(!cfg.scale_factors.empty(), invalid_argument, "lst needs at least one block set");
  const int w = cfg.width;
  for (std::size_t k = 0; k < cfg.scale_factors.size(); ++k) {
    const int r = cfg.scale_factors[k];
    LSC_CHECK(r == 1 || r == 2 || r == 4, unsupported, "lst scale factors must be 1, 2 or 4");
    const int cin = k == 0 ? cfg.input_channels : w;
    BlockSet s;
    const std::string base = name + ".set" + std::to_string(k);
    s.r = r;
    s.plain_a = nn::Conv2d(base + ".pa", cin, w, 3, 1, 1, rng);
    s.plain_b = nn::Conv2d(base + ".pb", w, w, 3, 1, 1, rng);
    if (cin != w) {
      s.plain_skip = nn::Conv2d(base + ".ps", cin, w, 1, 1, 0, rng);
      s.has_plain_skip = true;
    }
    if (r > 1) {
      const int kk = r == 2 ? 3 : 5;
      s.up_a_tconv = nn::ConvTranspose2d(base + ".ua", w, w, kk, r, 1, 1, rng);
      s.up_uses_tconv = true;
      s.up_skip = nn::Conv2d(base + ".us", w, w, 1, 1, 0, rng);
      s.has_up_skip = true;
    } else {
      s.up_a_conv = nn::Conv2d(base + ".ua", w, w, 3, 1, 1, rng);
    }
    s.up_b = nn::Conv2d(base + ".ub", w, w, 3, 1, 1, rng);
    s.igdn = nn::Gdn(base + ".igdn", w, true);
    sets_.push_back(std::move(s));
  }
  out_conv_ = nn::Conv2d(name + ".out", w, cfg.output_channels, 3, 1, 1, rng);
}

Var Lst::residual_plain(Tape& t, Var x, const BlockSet& s) const {
  Var h = leaky_relu(s.plain_a.forward(t, x), kLRelu);
  h = s.plain_b.forward(t, h);
  Var skip = s.has_plain_skip ? s.plain_skip.forward(t, x) : x;
  return add(h, skip);
}

Var Lst::residual_up(Tape& t, Var x, const BlockSet& s) const {
  Var h = s.up_uses_tconv ? s.up_a_tconv.forward(t, x) : s.up_a_conv.forward(t, x);
  h = leaky_relu(h, kLRelu);
  h = s.up_b.forward(t, h);
  Var skip = x;
  if (s.r > 1) skip = s.up_skip.forward(t, upsample_nearest(x, s.r));
  return s.igdn.forward(t, add(h, skip));
}

Var Lst::forward(Tape& t, Var prefix_latent) const {
  LSC_CHECK(t.value(prefix_latent).c() == cfg_.input_channels, shape_mismatch,
            "lst input width mismatch: got " + std::to_string(t.value(prefix_latent).c()) + ", want " +
                std::to_string(cfg_.input_channels));
  Var h = prefix_latent;
  for (const auto& s : sets_) {
    h = residual_plain(t, h, s);
    h = residual_up(t, h, s);
  }
  return apply_activation(out_conv_.forward(t, h), cfg_.final_activation);
}

void Lst::collect(std::vector<nn::Parameter*>& out) {
  for (auto& s : sets_) {
    s.plain_a.collect(out);
    s.plain_b.collect(out);
    if (s.has_plain_skip) s.plain_skip.collect(out);
    if (s.up_uses_tconv)
      s.up_a_tconv.collect(out);
    else
      s.up_a_conv.collect(out);
    s.up_b.collect(out);
    if (s.has_up_skip) s.up_skip.collect(out);
    s.igdn.collect(out);
  }
  out_conv_.collect(out);
}

void Lst::project() {
  for (auto& s : sets_) s.igdn.project();
}

Var apply_activation(Var x, Activation act) {
  switch (act) {
    case Activation::linear:
      return x;
    case Activation::relu:
      return relu(x);
    case Activation::leaky_relu:
      return leaky_relu(x, kLRelu);
  }
  fail(Error::Kind::invalid_argument, "unknown activation");
}

Var feature_distortion(Tape& t, Var estimated, Var target, const TaskBackend& backend,
                       DistortionVariant variant) {
  switch (variant) {
    case DistortionVariant::direct:
      return mse(target, estimated);
    case DistortionVariant::through_backend_stub:
      return mse(backend.backend_stub(t, target), backend.backend_stub(t, estimated));
    case DistortionVariant::multi_tap: {
      auto target_taps = backend.taps_from_features(t, target);
      auto est_taps = backend.taps_from_features(t, estimated);
      LSC_CHECK(!target_taps.empty(), not_found, "backend declares no taps");
      Var acc;
      for (std::size_t i = 0; i < target_taps.size(); ++i) {
        Var d = mse(target_taps[i], est_taps[i]);
        acc = i == 0 ? d : add(acc, d);
      }
      return scale(acc, 1.0 / static_cast<double>(target_taps.size()));
    }
  }
  fail(Error::Kind::invalid_argument, "unknown distortion variant");
}

Var count_cross_entropy(Tape& t, Var logits, const std::array<int, 3>& counts) {
  Var total;
  for (int c = 0; c < data::kNumShapeClasses; ++c) {
    Var group = slice_c(logits, c * kCountBins, kCountBins);
    Var lse = channel_lse(t, group);
    Var truth = slice_c(group, counts[c], 1);
    Var ce = sub(sum(lse), sum(truth));
    total = c == 0 ? ce : add(total, ce);
  }
  return scale(total, 1.0 / data::kNumShapeClasses);
}

Var mask_cross_entropy(Tape& t, Var logits, const std::vector<std::uint8_t>& mask) {
  const Tensor& lv = t.value(logits);
  const int h = lv.h(), w = lv.w(), c = lv.c();
  LSC_CHECK(static_cast<int>(mask.size()) == h * w, shape_mismatch, "mask/logits size mismatch");
  Tensor onehot = Tensor::hwc(h, w, c);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) onehot.at(i, j, mask[static_cast<std::size_t>(i) * w + j]) = 1.0;
  Var lse = channel_lse(t, logits);
  Var truth = sum_channels(mul(logits, t.constant(onehot)));
  return mean(sub(lse, truth));
}

double pretrain_backend(TaskBackend& backend, const data::ShapesParams& corpus, const PretrainConfig& cfg) {
  auto train = data::make_dataset(corpus, cfg.seed, cfg.dataset_size);
  auto val = data::make_dataset(corpus, cfg.seed, std::max(64, cfg.dataset_size / 8),
                                data::kValSplitOffset);
  std::vector<nn::Parameter*> params;
  backend.collect(params);
  nn::Adam opt(params, cfg.lr);
  nn::Rng order_rng(nn::derive_seed(cfg.seed, 0xbacc));

  auto* count_net = dynamic_cast<ShapeCountNet*>(&backend);
  auto* mask_net = dynamic_cast<ShapeMaskNet*>(&backend);
  LSC_CHECK(count_net || mask_net, unsupported, "unknown backend type");

  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      opt.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = train[order[i]];
        Tape t;
        Var img = t.constant(s.image);
        Var loss;
        if (count_net) {
          loss = count_cross_entropy(t, count_net->logits_from_image(t, img), s.counts);
        } else {
          Var f = mask_net->front_end(t, img);
          loss = mask_cross_entropy(t, mask_net->logits_from_features(t, f), s.mask);
        }
        loss = scale(loss, 1.0 / static_cast<double>(stop - start));
        t.backward(loss);
      }
      opt.clip_global_grad_norm(5.0);
      opt.step();
    }
  }
  return evaluate_backend_on_images(backend, val);
}

double evaluate_backend_on_images(const TaskBackend& backend, const std::vector<data::Sample>& samples) {
  LSC_CHECK(!samples.empty(), invalid_argument, "empty evaluation set");
  double acc = 0.0;
  for (const auto& s : samples) {
    TaskOutput out = backend.infer_from_image(s.image);
    acc += backend.score(out, s);
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace lsc::tasks
