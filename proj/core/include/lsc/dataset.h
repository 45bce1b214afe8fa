#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lsc/tensor.h"

namespace lsc::data {

constexpr int kNumShapeClasses = 3;  // circle, square, triangle

/// Parameters of the procedural shapes corpus. Two stock corpora ("a" and
/// "b") differ in palette and noise so the two training stages see
/// different statistics.
struct ShapesParams {
  int image_size = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  double noise = 0.015;
  int palette = 0;  // 0 or 1

  static ShapesParams corpus_a(int size = 64);
  static ShapesParams corpus_b(int size = 64);
};

struct Sample {
  Tensor image;                                  // size x size x 3 in [0,1]
  std::array<int, kNumShapeClasses> counts{};    // shapes per class, 0..max_shapes
  std::vector<std::uint8_t> mask;                // size*size, 0 = background, 1..3 = class
  std::uint64_t sample_id = 0;
};

/// Fully reproducible: the sample depends only on (params, seed, index).
Sample make_sample(const ShapesParams& params, std::uint64_t seed, std::uint64_t index);

std::vector<Sample> make_dataset(const ShapesParams& params, std::uint64_t seed, int count,
                                 std::uint64_t index_offset = 0);

/// Index offset that keeps validation samples disjoint from any
/// reasonably sized training range under the same seed.
constexpr std::uint64_t kValSplitOffset = 1ull << 20;

}  // namespace lsc::data
