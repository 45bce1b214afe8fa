#include "lsc/dataset.h"

#include <algorithm>
#include <cmath>

#include "lsc/nn.h"

namespace lsc::data {

namespace {

struct Rgb {
  double r, g, b;
};

// Two palettes with distinct hue families; index 0 within each palette is
// reserved for backgrounds.
const Rgb kPalette0_bg[] = {{0.92, 0.92, 0.88}, {0.85, 0.89, 0.93}, {0.90, 0.86, 0.92}};
const Rgb kPalette0_fg[] = {{0.82, 0.18, 0.20}, {0.15, 0.45, 0.78}, {0.16, 0.62, 0.30},
                            {0.90, 0.62, 0.12}, {0.48, 0.22, 0.62}};
const Rgb kPalette1_bg[] = {{0.16, 0.17, 0.20}, {0.22, 0.20, 0.16}, {0.14, 0.20, 0.18}};
const Rgb kPalette1_fg[] = {{0.95, 0.80, 0.25}, {0.35, 0.75, 0.90}, {0.88, 0.40, 0.55},
                            {0.55, 0.90, 0.45}, {0.80, 0.80, 0.85}};

}  // namespace

ShapesParams ShapesParams::corpus_a(int size) {
  ShapesParams p;
  p.image_size = size;
  p.palette = 0;
  p.noise = 0.015;
  return p;
}

ShapesParams ShapesParams::corpus_b(int size) {
  ShapesParams p;
  p.image_size = size;
  p.palette = 1;
  p.noise = 0.025;
  return p;
}

Sample make_sample(const ShapesParams& params, std::uint64_t seed, std::uint64_t index) {
  LSC_CHECK(params.image_size >= 32, invalid_argument, "shapes images must be at least 32px");
  LSC_CHECK(params.min_shapes >= 1 && params.max_shapes <= 3 && params.min_shapes <= params.max_shapes,
            invalid_argument, "shape count range must be within 1..3");
  nn::Rng rng(nn::derive_seed(seed, index));
  const int sz = params.image_size;

  const Rgb* bgs = params.palette == 0 ? kPalette0_bg : kPalette1_bg;
  const Rgb* fgs = params.palette == 0 ? kPalette0_fg : kPalette1_fg;
  const int nbg = 3, nfg = 5;

  Sample s;
  s.sample_id = nn::derive_seed(seed ^ 0x5ca1ab1eULL, index);
  s.image = Tensor::hwc(sz, sz, 3);
  s.mask.assign(static_cast<std::size_t>(sz) * sz, 0);

  const Rgb bg = bgs[rng.u64_below(nbg)];
  for (int y = 0; y < sz; ++y)
    for (int x = 0; x < sz; ++x) {
      s.image.at(y, x, 0) = bg.r;
      s.image.at(y, x, 1) = bg.g;
      s.image.at(y, x, 2) = bg.b;
    }

  const int nshapes =
      params.min_shapes + static_cast<int>(rng.u64_below(params.max_shapes - params.min_shapes + 1));
  for (int n = 0; n < nshapes; ++n) {
    const int cls = static_cast<int>(rng.u64_below(kNumShapeClasses));  // 0 circle, 1 square, 2 triangle
    const Rgb col = fgs[rng.u64_below(nfg)];
    const double half = rng.uniform(sz * 0.10, sz * 0.22);
    const double cx = rng.uniform(half + 1.0, sz - half - 1.0);
    const double cy = rng.uniform(half + 1.0, sz - half - 1.0);
    s.counts[cls]++;
    for (int y = 0; y < sz; ++y) {
      for (int x = 0; x < sz; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        bool inside = false;
        switch (cls) {
          case 0:
            inside = dx * dx + dy * dy <= half * half;
            break;
          case 1:
            inside = std::abs(dx) <= half * 0.9 && std::abs(dy) <= half * 0.9;
            break;
          case 2:
            // upright isoceles triangle: apex at cy-half, base at cy+half
            inside = dy >= -half && dy <= half && std::abs(dx) <= (dy + half) * 0.6;
            break;
        }
        if (inside) {
          s.image.at(y, x, 0) = col.r;
          s.image.at(y, x, 1) = col.g;
          s.image.at(y, x, 2) = col.b;
          s.mask[static_cast<std::size_t>(y) * sz + x] = static_cast<std::uint8_t>(cls + 1);
        }
      }
    }
  }

  if (params.noise > 0.0) {
    for (std::int64_t i = 0; i < s.image.size(); ++i) {
      s.image[i] = std::clamp(s.image[i] + rng.normal(0.0, params.noise), 0.0, 1.0);
    }
  }
  return s;
}

std::vector<Sample> make_dataset(const ShapesParams& params, std::uint64_t seed, int count,
                                 std::uint64_t index_offset) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_sample(params, seed, index_offset + i));
  return out;
}

}  // namespace lsc::data
