#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pscl/errors.hpp"
#include "pscl/rng.hpp"
#include "pscl/tensor.hpp"

namespace pscl {

enum class TransformKind {
  Identity,
  Rotate90,
  Rotate180,
  Rotate270,
  FlipH,
  FlipHRotate90,
  FlipHRotate180,
  FlipHRotate270,
  Scale,
  Shear,
  Translate,
  PixelPermutation,
};

// One concrete transformation. Geometry parameters only matter for the kinds
// that use them; pixperm carries its own permutation so the pseudo class is a
// consistent pixel map across every image it touches.
struct Transform {
  TransformKind kind = TransformKind::Identity;
  double factor = 0.0;               // Scale / Shear
  int dx = 0, dy = 0;                // Translate
  std::uint64_t perm_seed = 0;       // PixelPermutation
  std::vector<std::int64_t> perm;    // filled lazily per image geometry

  std::string name() const;
};

struct TransformSet {
  std::vector<Transform> items;
  std::int64_t np() const { return static_cast<std::int64_t>(items.size()); }
};

inline const std::vector<std::string>& transform_names() {
  static const std::vector<std::string> names = {
      "identity", "rot90",       "rot180",       "rot270",    "fliph", "fliph_rot90",
      "fliph_rot180", "fliph_rot270", "scale", "shear", "translate", "pixperm"};
  return names;
}

inline std::string Transform::name() const {
  return transform_names()[static_cast<std::size_t>(kind)];
}

namespace detail {

inline bool rotation_like(TransformKind k) {
  switch (k) {
    case TransformKind::Rotate90:
    case TransformKind::Rotate270:
    case TransformKind::FlipHRotate90:
    case TransformKind::FlipHRotate270:
      return true;
    default:
      return false;
  }
}

// Nearest-neighbor inverse map about the image center; out-of-range reads are
// zero fill.
inline double sample_nearest(const double* plane, std::int64_t h, std::int64_t w, double r, double c) {
  const auto ri = static_cast<std::int64_t>(std::lround(r));
  const auto ci = static_cast<std::int64_t>(std::lround(c));
  if (ri < 0 || ri >= h || ci < 0 || ci >= w) return 0.0;
  return plane[ri * w + ci];
}

}  // namespace detail

// Applies one transform to a c x h x w image. The 90/270 rotations require
// h == w. Rotation is counter-clockwise: out[r][c] = in[c][h-1-r]. Flip
// mirrors columns: out[r][c] = in[r][w-1-c]. Composite kinds flip first, then
// rotate.
inline void apply_transform(const double* src, double* dst, std::int64_t c, std::int64_t h,
                            std::int64_t w, const Transform& t) {
  if ((detail::rotation_like(t.kind)) && h != w)
    throw contract_error("transform " + t.name() + ": 90/270-degree rotation needs a square image, got " +
                         std::to_string(h) + "x" + std::to_string(w));
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* in = src + ch * h * w;
    double* out = dst + ch * h * w;
    switch (t.kind) {
      case TransformKind::Identity:
        std::copy(in, in + h * w, out);
        break;
      case TransformKind::Rotate90:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[col * w + (h - 1 - r)];
        break;
      case TransformKind::Rotate180:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[(h - 1 - r) * w + (w - 1 - col)];
        break;
      case TransformKind::Rotate270:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[(h - 1 - col) * w + r];
        break;
      case TransformKind::FlipH:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[r * w + (w - 1 - col)];
        break;
      case TransformKind::FlipHRotate90:
        // flip then rotate90: out[r][c] = flipped[c][h-1-r] = in[c][w-1-(h-1-r)]
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[col * w + (w - 1 - (h - 1 - r))];
        break;
      case TransformKind::FlipHRotate180:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[(h - 1 - r) * w + col];
        break;
      case TransformKind::FlipHRotate270:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) out[r * w + col] = in[(h - 1 - col) * w + (w - 1 - r)];
        break;
      case TransformKind::Scale:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col)
            out[r * w + col] = detail::sample_nearest(in, h, w, (static_cast<double>(r) - cy) / t.factor + cy,
                                                      (static_cast<double>(col) - cx) / t.factor + cx);
        break;
      case TransformKind::Shear:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col)
            out[r * w + col] = detail::sample_nearest(
                in, h, w, static_cast<double>(r),
                static_cast<double>(col) - t.factor * (static_cast<double>(r) - cy));
        break;
      case TransformKind::Translate:
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t col = 0; col < w; ++col) {
            const std::int64_t sr = r - t.dy, sc = col - t.dx;
            out[r * w + col] = (sr >= 0 && sr < h && sc >= 0 && sc < w) ? in[sr * w + sc] : 0.0;
          }
        break;
      case TransformKind::PixelPermutation: {
        check_contract(static_cast<std::int64_t>(t.perm.size()) == h * w,
                       "pixperm: permutation not prepared for this geometry");
        for (std::int64_t i = 0; i < h * w; ++i) out[i] = in[t.perm[static_cast<std::size_t>(i)]];
        break;
      }
    }
  }
}

// Binds geometry-dependent state (currently just the pixperm table) to the
// image size. One fixed permutation per transform instance, seeded.
inline void prepare_transform(Transform& t, std::int64_t h, std::int64_t w) {
  if (t.kind != TransformKind::PixelPermutation) return;
  t.perm.resize(static_cast<std::size_t>(h * w));
  std::iota(t.perm.begin(), t.perm.end(), 0);
  Rng rng(t.perm_seed);
  rng.shuffle(t.perm.data(), t.perm.size());
}

// Defaults for the parameterized kinds used by the ablation harness.
struct TransformDefaults {
  double scale_factor = 0.75;
  double shear_factor = 0.25;
  int translate_dx = -1;  // -1: resolved to floor(w/4) at prepare time
  int translate_dy = 0;
  std::uint64_t pixperm_seed = 0x70657271;
};

inline Transform make_transform(const std::string& name, const TransformDefaults& d = {}) {
  Transform t;
  const auto& names = transform_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw config_error("unknown transform '" + name + "'; valid names: " + valid);
  }
  t.kind = static_cast<TransformKind>(it - names.begin());
  switch (t.kind) {
    case TransformKind::Scale:
      t.factor = d.scale_factor;
      break;
    case TransformKind::Shear:
      t.factor = d.shear_factor;
      break;
    case TransformKind::Translate:
      t.dx = d.translate_dx;
      t.dy = d.translate_dy;
      break;
    case TransformKind::PixelPermutation:
      t.perm_seed = d.pixperm_seed;
      break;
    default:
      break;
  }
  return t;
}

// Ordered set; the first entry must be the non-transformation so original
// examples are always introduced to the network.
inline TransformSet parse_transform_set(const std::vector<std::string>& names,
                                        const TransformDefaults& defaults = {}) {
  if (names.empty()) throw config_error("transform set: empty");
  TransformSet set;
  for (const auto& n : names) {
    for (const auto& prev : set.items)
      if (prev.name() == n) throw config_error("transform set: duplicate '" + n + "'");
    set.items.push_back(make_transform(n, defaults));
  }
  if (set.items.front().kind != TransformKind::Identity)
    throw config_error("transform set: first transformation must be 'identity'");
  return set;
}

// Resolves geometry-dependent parameters for all members.
inline void prepare_transform_set(TransformSet& set, std::int64_t h, std::int64_t w) {
  for (auto& t : set.items) {
    if (t.kind == TransformKind::Translate && t.dx < 0) t.dx = static_cast<int>(w / 4);
    prepare_transform(t, h, w);
  }
}

// ---------------------------------------------------------------------------
// Pseudo-labeled batches
// ---------------------------------------------------------------------------

// Lightweight immutable view of an image stack; deliberately label-free so
// training code cannot observe ground truth.
struct ImagesView {
  const double* data = nullptr;
  std::int64_t m = 0, c = 0, h = 0, w = 0;
  std::int64_t image_size() const { return c * h * w; }
  const double* image(std::int64_t i) const { return data + i * image_size(); }
};

struct PseudoBatch {
  Tensor images;             // (m, c, h, w) transformed copies
  std::vector<int> labels;   // pseudo parent-class per row
  std::vector<int> origin;   // source example index per row
};

// One uniformly random pseudo label per source example, image transformed
// accordingly, rows shuffled. Input images are never mutated.
inline PseudoBatch make_pseudo_batch(const ImagesView& x, const TransformSet& set, Rng& rng) {
  check_contract(x.m > 0, "make_pseudo_batch: empty input");
  check_contract(!set.items.empty() && set.items.front().kind == TransformKind::Identity,
                 "make_pseudo_batch: transform set must start with identity");
  const std::int64_t np = set.np();
  const std::int64_t isz = x.image_size();

  std::vector<int> labels(static_cast<std::size_t>(x.m));
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(np)));

  std::vector<std::int64_t> order(static_cast<std::size_t>(x.m));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.data(), order.size());

  PseudoBatch out;
  out.images = Tensor::zeros({x.m, x.c, x.h, x.w});
  out.labels.resize(static_cast<std::size_t>(x.m));
  out.origin.resize(static_cast<std::size_t>(x.m));
  for (std::int64_t row = 0; row < x.m; ++row) {
    const std::int64_t src = order[static_cast<std::size_t>(row)];
    const int label = labels[static_cast<std::size_t>(src)];
    apply_transform(x.image(src), out.images.data() + row * isz, x.c, x.h, x.w,
                    set.items[static_cast<std::size_t>(label)]);
    out.labels[static_cast<std::size_t>(row)] = label;
    out.origin[static_cast<std::size_t>(row)] = static_cast<int>(src);
  }
  return out;
}

}  // namespace pscl
