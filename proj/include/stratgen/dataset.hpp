#pragma once

#include <cstdint>
#include <vector>

#include "stratgen/tensor.hpp"

namespace stratgen {

// Synthetic corpus with an explicit layout/texture hierarchy: class id
// combines a shape kind (layout, low frequency) with a texture family
// (high frequency fill), so the two latent levels have distinct signal.
struct ShapesTexSpec {
  int image_size = 64;
  int shape_kinds = 4;       // circle, rectangle, triangle, cross
  int texture_families = 3;  // stripes, checker, speckle
  uint64_t seed = 0;

  int num_classes() const { return shape_kinds * texture_families; }
};

struct LabeledImage {
  Tensor image;  // [H,W,3] in [0,1]
  int class_id = 0;
};

// Pure function of (spec.seed, index): same arguments, bit-identical image.
// class_id = index % num_classes, so any index range has a balanced histogram.
LabeledImage gen_shapes_tex_item(const ShapesTexSpec& spec, int64_t index);

// Items for indices [start, start+count). Train/val splits use disjoint
// index ranges of the same seed stream.
std::vector<LabeledImage> gen_shapes_tex(const ShapesTexSpec& spec, int64_t start, int count);

}  // namespace stratgen
