#pragma once

// Deterministic synthetic face/occlusion corpora. Each face class is a cone
// over a few smooth nonnegative basis images that share a common "mean face";
// occlusions overwrite a region with a per-category texture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "soc/core.hpp"

namespace soc {

enum class RegionKind { Rectangle, LowerBand, UpperBand };

inline const char* to_string(RegionKind r) {
  switch (r) {
    case RegionKind::Rectangle: return "rectangle";
    case RegionKind::LowerBand: return "lower-band";
    case RegionKind::UpperBand: return "upper-band";
  }
  return "?";
}

inline RegionKind parse_region(const std::string& s) {
  if (s == "rectangle") return RegionKind::Rectangle;
  if (s == "lower-band") return RegionKind::LowerBand;
  if (s == "upper-band") return RegionKind::UpperBand;
  throw Error(ErrorCode::BadSpec, "unknown region generator '" + s + "'");
}

struct OcclusionShape {
  std::string name;
  RegionKind region = RegionKind::Rectangle;
  double area = 0.25;
  // Intensity the texture is centred on; dark and bright occluders.
  double level = 0.05;
};

struct SynthSpec {
  int classes = 10;
  int samples_per_class = 7;
  int test_per_class = 3;
  int height = 83;
  int width = 60;
  int subspace_dim = 3;
  std::vector<OcclusionShape> occlusion_shapes = {{"sunglasses", RegionKind::UpperBand, 0.25, 0.05},
                                                  {"scarf", RegionKind::LowerBand, 0.6, 0.9}};
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  // Amplitudes of the shared face component and of the class-specific part.
  double common_amplitude = 0.4;
  double class_amplitude = 0.3;
  // Peak-to-peak swing of an occluder's texture around its level.
  double texture_contrast = 0.2;
  // Per-image variation of an occluder's texture.
  double texture_jitter = 0.05;

  void validate() const {
    if (classes < 1 || samples_per_class < 1 || test_per_class < 0 || height < 2 || width < 2)
      throw Error(ErrorCode::BadSpec, "counts and dimensions must be positive");
    if (subspace_dim < 1 || subspace_dim > samples_per_class)
      throw Error(ErrorCode::BadSpec, "subspace_dim must lie in [1, samples_per_class]");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::BadSpec, "noise_sigma must be >= 0");
    for (const auto& s : occlusion_shapes)
      if (!(s.area > 0.0 && s.area < 1.0)) throw Error(ErrorCode::BadSpec, "area fractions must lie in (0,1)");
  }

  const OcclusionShape& shape(const std::string& name) const {
    for (const auto& s : occlusion_shapes)
      if (s.name == name) return s;
    throw Error(ErrorCode::UnknownShape, "no occlusion shape named '" + name + "'");
  }
};

namespace synth_detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

/// Small portable generator so corpora are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}
  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    return splitmix(state_);
  }
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double gaussian() {
    const double u1 = std::max(uniform(), 1e-300), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  int below(int n) { return int(next() % std::uint64_t(n)); }

 private:
  std::uint64_t state_;
};

// One pass of the separable [1 4 6 4 1]/16 filter with replicated borders.
inline void binomial_pass(std::vector<double>& v, int h, int w) {
  static constexpr double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  std::vector<double> tmp(v.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * v[std::size_t(r) * w + std::clamp(c + d, 0, w - 1)];
      tmp[std::size_t(r) * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * tmp[std::size_t(std::clamp(r + d, 0, h - 1)) * w + c];
      v[std::size_t(r) * w + c] = acc;
    }
}

/// Low-pass filtered uniform noise, rescaled to [0,1].
inline std::vector<double> smooth_field(std::uint64_t seed, int h, int w, int passes) {
  Rng rng(seed);
  std::vector<double> v(std::size_t(h) * w);
  for (double& x : v) x = rng.uniform();
  for (int p = 0; p < passes; ++p) binomial_pass(v, h, w);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  for (double& x : v) x = b > a ? (x - a) / (b - a) : 0.5;
  return v;
}

// Passes giving a correlation length of roughly 7% of the smaller side.
inline int face_passes(int h, int w) {
  const double s = 0.07 * std::min(h, w);
  return std::max(1, int(std::lround(s * s)));
}

}  // namespace synth_detail

inline std::string class_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%03d", i);
  return buf;
}

/// Precomputed class bases. Each basis image is 0.5 plus a shared smooth
/// component plus a class-specific smooth component, clamped to [0,1].
class FaceModel {
 public:
  explicit FaceModel(SynthSpec spec) : spec_(std::move(spec)) {
    using namespace synth_detail;
    spec_.validate();
    const int passes = face_passes(spec_.height, spec_.width);
    const auto common = smooth_field(mix(spec_.seed, 0xFACE), spec_.height, spec_.width, passes);
    bases_.resize(std::size_t(spec_.classes));
    for (int c = 0; c < spec_.classes; ++c)
      for (int l = 0; l < spec_.subspace_dim; ++l) {
        const auto own = smooth_field(mix(mix(spec_.seed, 0xC1A55 + std::uint64_t(c)), std::uint64_t(l)),
                                      spec_.height, spec_.width, passes);
        Vector v(Eigen::Index(common.size()));
        for (std::size_t i = 0; i < common.size(); ++i)
          v[Eigen::Index(i)] = std::clamp(
              0.5 + spec_.common_amplitude * (common[i] - 0.5) + spec_.class_amplitude * (own[i] - 0.5), 0.0, 1.0);
        bases_[std::size_t(c)].push_back(std::move(v));
      }
  }

  const SynthSpec& spec() const { return spec_; }
  const std::vector<Vector>& basis(int cls) const { return bases_.at(std::size_t(cls)); }

  /// Face image `index` of class `cls`: a random convex combination of the
  /// class basis plus optional Gaussian noise, as raw [0,1] intensities.
  ImageVector image(int cls, int index) const {
    using namespace synth_detail;
    Rng rng(mix(mix(spec_.seed, 0x5A3B1E + std::uint64_t(cls)), std::uint64_t(index)));
    std::vector<double> weights(std::size_t(spec_.subspace_dim));
    double total = 0;
    for (double& a : weights) total += (a = 0.05 + rng.uniform());
    Vector img = Vector::Zero(Eigen::Index(spec_.height) * spec_.width);
    for (int l = 0; l < spec_.subspace_dim; ++l) img += (weights[std::size_t(l)] / total) * basis(cls)[std::size_t(l)];
    if (spec_.noise_sigma > 0.0)
      for (Eigen::Index i = 0; i < img.size(); ++i)
        img[i] = std::clamp(img[i] + spec_.noise_sigma * rng.gaussian(), 0.0, 1.0);
    return ImageVector(std::move(img), spec_.height, spec_.width, false);
  }

 private:
  SynthSpec spec_;
  std::vector<std::vector<Vector>> bases_;
};

struct LabeledImage {
  ImageVector image;  // raw intensities
  std::string face_label;
  std::string occlusion_label = kNone;
  std::optional<OcclusionMask> truth;
};

/// Gallery dictionary at (height, width): samples 0..samples_per_class-1 of each
/// class, block-averaged to the target grid and normalized.
inline BlockedDictionary gallery_dictionary(const FaceModel& model, int height, int width) {
  const SynthSpec& spec = model.spec();
  const Eigen::Index m = Eigen::Index(height) * width;
  Matrix atoms(m, Eigen::Index(spec.classes) * spec.samples_per_class);
  std::vector<Block> blocks;
  Eigen::Index col = 0;
  for (int c = 0; c < spec.classes; ++c) {
    for (int j = 0; j < spec.samples_per_class; ++j) {
      const ImageVector img = model.image(c, j);
      atoms.col(col++) =
          (height == spec.height && width == spec.width) ? img.data : downsample(img, height, width).data;
    }
    blocks.push_back({class_label(c), BlockKind::Face, col - spec.samples_per_class, col});
  }
  return BlockedDictionary(std::move(atoms), std::move(blocks), height, width);
}

struct Gallery {
  BlockedDictionary train;
  std::vector<LabeledImage> test;
};

/// Gallery at the native resolution plus test_per_class clean test images per class.
inline Gallery generate_gallery(const SynthSpec& spec) {
  const FaceModel model(spec);
  Gallery g{gallery_dictionary(model, spec.height, spec.width), {}};
  for (int c = 0; c < spec.classes; ++c)
    for (int j = 0; j < spec.test_per_class; ++j)
      g.test.push_back({model.image(c, spec.samples_per_class + j), class_label(c), kNone, std::nullopt});
  return g;
}

/// Ground-truth region with exactly floor(area * m) occluded pixels, 4-connected.
inline OcclusionMask occlusion_region(int h, int w, RegionKind kind, double area, std::uint64_t instance_seed) {
  const int m = h * w;
  const int target = int(std::floor(area * m + 1e-9));
  std::vector<std::uint8_t> z(std::size_t(m), 1);
  if (target <= 0) return OcclusionMask(std::move(z), h, w);
  if (kind == RegionKind::LowerBand || kind == RegionKind::UpperBand) {
    // Whole rows from the edge inward, then a partial row flush with the left border.
    for (int k = 0; k < target; ++k) {
      const int row_from_edge = k / w, col = k % w;
      const int row = kind == RegionKind::LowerBand ? h - 1 - row_from_edge : row_from_edge;
      z[std::size_t(row) * w + col] = 0;
    }
    return OcclusionMask(std::move(z), h, w);
  }
  synth_detail::Rng rng(instance_seed);
  const double aspect = std::exp(std::log(0.5) + rng.uniform() * std::log(4.0));  // width / height in [0.5, 2]
  int rw = std::clamp(int(std::lround(std::sqrt(target * aspect))), 1, w);
  int rh = (target + rw - 1) / rw;
  if (rh > h) {
    rh = h;
    rw = (target + h - 1) / h;
  }
  const int top = rng.below(h - rh + 1), left = rng.below(w - rw + 1);
  for (int k = 0; k < target; ++k) z[std::size_t(top + k / rw) * w + left + k % rw] = 0;
  return OcclusionMask(std::move(z), h, w);
}

/// Occluder texture of a category: a smooth pattern around the shape's level.
inline std::vector<double> occluder_texture(const SynthSpec& spec, const OcclusionShape& shape,
                                            std::uint64_t instance_seed) {
  using namespace synth_detail;
  const auto base = smooth_field(mix(spec.seed, hash_string(shape.name)), spec.height, spec.width, 2);
  std::vector<double> jitter;
  if (spec.texture_jitter > 0.0) jitter = smooth_field(mix(instance_seed, 0x717), spec.height, spec.width, 4);
  std::vector<double> t(base.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = shape.level + spec.texture_contrast * (base[i] - 0.5);
    if (!jitter.empty()) v += spec.texture_jitter * (jitter[i] - 0.5) * 2.0;
    t[i] = std::clamp(v, 0.0, 1.0);
  }
  return t;
}

struct OccludedImage {
  ImageVector occluded;
  OcclusionMask truth;
};

/// Overwrites the shape's region with its texture. `instance` seeds the
/// rectangle placement, texture jitter and noise of this application.
inline OccludedImage apply_occlusion(const ImageVector& img, const OcclusionShape& shape, const SynthSpec& spec,
                                     std::uint64_t instance) {
  if (img.height != spec.height || img.width != spec.width)
    throw Error(ErrorCode::DimMismatch, "image shape differs from the corpus shape");
  const std::uint64_t seed = synth_detail::mix(synth_detail::mix(spec.seed, synth_detail::hash_string(shape.name)), instance);
  OcclusionMask truth = occlusion_region(img.height, img.width, shape.region, shape.area, seed);
  const auto tex = occluder_texture(spec, shape, seed);
  synth_detail::Rng noise(synth_detail::mix(seed, 0xA015E));
  Vector out = img.data;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (truth.support[std::size_t(i)]) continue;
    double v = tex[std::size_t(i)];
    if (spec.noise_sigma > 0.0) v = std::clamp(v + spec.noise_sigma * noise.gaussian(), 0.0, 1.0);
    out[i] = v;
  }
  return {ImageVector(std::move(out), img.height, img.width, false), std::move(truth)};
}

inline OccludedImage apply_occlusion(const ImageVector& img, const std::string& shape, const SynthSpec& spec,
                                     std::uint64_t instance) {
  return apply_occlusion(img, spec.shape(shape), spec, instance);
}

}  // namespace soc
