#include "stratgen/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace stratgen {

namespace {

// Shape geometry snaps to the 8px grid and textures lock to pixel
// coordinates, so the bottom level (8px cells) sees a small discrete set of
// appearances while layout, background and palette choice vary freely at the
// top level's scale. That is the hierarchy the corpus exists to carry.
constexpr int kSnap = 8;

constexpr float kPalette[8][3] = {
    {1.00f, 0.25f, 0.25f}, {0.25f, 1.00f, 0.30f}, {0.25f, 0.40f, 1.00f},
    {1.00f, 1.00f, 0.30f}, {1.00f, 0.35f, 1.00f}, {0.30f, 1.00f, 1.00f},
    {1.00f, 0.60f, 0.25f}, {0.92f, 0.92f, 0.92f},
};

struct ShapeSpec {
  int kind;
  int cx, cy;      // center, snapped
  int rx, ry;      // half extents, snapped
  float fg[3];     // texture color A (palette)
  float fg2[3];    // texture color B (tied dark companion)
  int tex_family;  // 0 stripes, 1 checker, 2 speckle
  int tex_period;  // 2 or 4
  int tex_orient;  // stripes: 0 vertical, 1 horizontal
};

bool inside_shape(const ShapeSpec& s, int x, int y) {
  const int dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case 0:  // square / block
    case 1:  // horizontal bar
    case 2:  // vertical bar
      return std::abs(dx) < s.rx && std::abs(dy) < s.ry;
    default: {  // plus-shaped cross, arms one snap unit wide
      const bool horiz = std::abs(dx) < s.rx && std::abs(dy) < kSnap;
      const bool vert = std::abs(dy) < s.ry && std::abs(dx) < kSnap;
      return horiz || vert;
    }
  }
}

// Locked to pixel coordinates: no per-shape phase.
float texture_value(const ShapeSpec& s, int x, int y) {
  switch (s.tex_family) {
    case 0: {  // stripes
      const int u = (s.tex_orient ? y : x) / s.tex_period;
      return (u & 1) ? 1.0f : 0.0f;
    }
    case 1:  // checker
      return (((x / s.tex_period) + (y / s.tex_period)) & 1) ? 1.0f : 0.0f;
    default: {  // speckle: one fixed global random field on 2px cells
      const uint64_t h = splitmix64(0x5bec71eULL ^ (static_cast<uint64_t>(x / 2) << 32) ^
                                    static_cast<uint64_t>(y / 2));
      return (h & 1) ? 1.0f : 0.0f;
    }
  }
}

}  // namespace

LabeledImage gen_shapes_tex_item(const ShapesTexSpec& spec, int64_t index) {
  if (index < 0) throw ContractError("gen_shapes_tex_item: negative index");
  const int n = spec.image_size;
  const int classes = spec.num_classes();
  const int class_id = static_cast<int>(index % classes);
  const int shape_kind = class_id / spec.texture_families;
  const int tex_family = class_id % spec.texture_families;

  Rng rng(splitmix64(splitmix64(spec.seed) ^
                     (static_cast<uint64_t>(index) * 0x9e3779b97f4a7c15ULL + 0x51ULL)));

  LabeledImage item;
  item.class_id = class_id;
  item.image = Tensor::zeros({n, n, 3});
  float* px = item.image.ptr();

  // flat background from a 4^3 color lattice: exactly representable by a
  // small top-level code set, so color never leaks into the bottom level's
  // residual stream
  float base[3];
  for (float& b : base) b = 0.08f + (0.4f / 3.0f) * static_cast<float>(rng.randint(4));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) px[(y * n + x) * 3 + c] = base[c];

  const int cells = std::max(2, n / kSnap);
  const int nshapes = 1 + rng.randint(3);
  std::vector<ShapeSpec> shapes(nshapes);
  for (ShapeSpec& s : shapes) {
    s.kind = shape_kind % 4;
    s.cx = kSnap * (1 + rng.randint(cells - 1));
    s.cy = kSnap * (1 + rng.randint(cells - 1));
    switch (s.kind) {
      case 0:
        s.rx = s.ry = kSnap * (1 + rng.randint(2));
        break;
      case 1:
        s.rx = kSnap * (2 + rng.randint(2));
        s.ry = kSnap;
        break;
      case 2:
        s.rx = kSnap;
        s.ry = kSnap * (2 + rng.randint(2));
        break;
      default:
        s.rx = s.ry = kSnap * 2;
        break;
    }
    const float* pal = kPalette[rng.randint(8)];
    for (int c = 0; c < 3; ++c) {
      s.fg[c] = pal[c];
      s.fg2[c] = 0.25f * pal[c];
    }
    s.tex_family = tex_family;
    s.tex_period = (rng.randint(2) == 0) ? 2 : 4;
    s.tex_orient = rng.randint(2);
  }

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (const ShapeSpec& s : shapes) {
        if (!inside_shape(s, x, y)) continue;
        const float t = texture_value(s, x, y);
        for (int c = 0; c < 3; ++c)
          px[(y * n + x) * 3 + c] = s.fg[c] * (1.0f - t) + s.fg2[c] * t;
      }

  for (int64_t i = 0; i < item.image.size(); ++i)
    px[i] = std::min(1.0f, std::max(0.0f, px[i]));
  return item;
}

std::vector<LabeledImage> gen_shapes_tex(const ShapesTexSpec& spec, int64_t start, int count) {
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(gen_shapes_tex_item(spec, start + i));
  return out;
}

}  // namespace stratgen
