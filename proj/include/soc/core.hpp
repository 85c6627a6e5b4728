#pragma once

// Domain types shared by every stage of the occlusion coding pipeline:
// grayscale grids, flattened image vectors, block-structured dictionaries,
// coefficient vectors and occlusion masks, plus the residual primitives.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "soc/error.hpp"

namespace soc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-major grayscale image with intensities in [0,1].
struct ImageGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ImageGrid() = default;
  ImageGrid(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
    validate();
  }
  ImageGrid(int h, int w, double fill) : ImageGrid(h, w, std::vector<double>(std::size_t(h) * w, fill)) {}

  double at(int row, int col) const { return values[std::size_t(row) * width + col]; }

  void validate() const {
    if (height < 1 || width < 1 || values.size() != std::size_t(height) * std::size_t(width))
      throw Error(ErrorCode::BadDims, "grid shape does not match value count");
    for (double v : values)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw Error(ErrorCode::BadDims, "grid intensity outside [0,1]");
  }
};

/// Flattened image (row-major) that remembers its grid shape.
struct ImageVector {
  Vector data;
  int height = 0;
  int width = 0;
  bool normalized = false;

  ImageVector() = default;
  ImageVector(Vector d, int h, int w, bool is_normalized = false)
      : data(std::move(d)), height(h), width(w), normalized(is_normalized) {
    if (h < 1 || w < 1 || data.size() != Eigen::Index(h) * w)
      throw Error(ErrorCode::BadDims, "vector length does not match shape");
  }

  Eigen::Index size() const { return data.size(); }
};

inline ImageVector vectorize(const ImageGrid& img, bool normalize) {
  img.validate();
  Vector d = Eigen::Map<const Vector>(img.values.data(), Eigen::Index(img.values.size()));
  if (normalize) {
    const double n = d.norm();
    if (n == 0.0) throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero image");
    d /= n;
  }
  return ImageVector(std::move(d), img.height, img.width, normalize);
}

/// Inverse of vectorize for unnormalized vectors; intensities are clamped to [0,1].
inline ImageGrid unflatten(const ImageVector& v) {
  std::vector<double> vals(v.data.data(), v.data.data() + v.data.size());
  for (double& x : vals) x = std::clamp(x, 0.0, 1.0);
  return ImageGrid(v.height, v.width, std::move(vals));
}

/// Unit-norm copy of v. Throws ZeroNorm for a zero vector.
inline ImageVector normalized(const ImageVector& v) {
  const double n = v.data.norm();
  if (n == 0.0) throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero vector");
  return ImageVector(v.data / n, v.height, v.width, true);
}

namespace detail {

// Partition boundaries of [0, source) into `parts` cells, rounded to nearest pixel.
inline std::vector<int> partition(int source, int parts) {
  std::vector<int> b(std::size_t(parts) + 1);
  for (int k = 0; k <= parts; ++k)
    b[std::size_t(k)] = int(std::floor(double(k) * source / parts + 0.5));
  return b;
}

inline std::vector<double> block_average(const double* src, int h, int w, int th, int tw) {
  if (th < 1 || tw < 1 || th > h || tw > w)
    throw Error(ErrorCode::BadDims, "downsample target must be within [1, source] per axis");
  const auto rb = partition(h, th);
  const auto cb = partition(w, tw);
  std::vector<double> out(std::size_t(th) * tw, 0.0);
  for (int r = 0; r < th; ++r) {
    for (int c = 0; c < tw; ++c) {
      double acc = 0.0;
      for (int i = rb[r]; i < rb[r + 1]; ++i)
        for (int j = cb[c]; j < cb[c + 1]; ++j) acc += src[std::size_t(i) * w + j];
      out[std::size_t(r) * tw + c] = acc / double((rb[r + 1] - rb[r]) * (cb[c + 1] - cb[c]));
    }
  }
  return out;
}

}  // namespace detail

/// Block-average downsampling over a uniform partition of source pixels.
inline ImageGrid downsample(const ImageGrid& img, int target_h, int target_w) {
  img.validate();
  auto out = detail::block_average(img.values.data(), img.height, img.width, target_h, target_w);
  for (double& x : out) x = std::clamp(x, 0.0, 1.0);  // guards against rounding past 1
  return ImageGrid(target_h, target_w, std::move(out));
}

/// Same partition applied to a signed vector (occlusion patterns, residuals).
/// The result is not normalized.
inline ImageVector downsample(const ImageVector& v, int target_h, int target_w) {
  auto out = detail::block_average(v.data.data(), v.height, v.width, target_h, target_w);
  return ImageVector(Eigen::Map<Vector>(out.data(), Eigen::Index(out.size())), target_h, target_w, false);
}

enum class BlockKind { Face, Occlusion };

inline const char* to_string(BlockKind k) { return k == BlockKind::Face ? "face" : "occlusion"; }

/// Half-open column range [begin, end) owned by one labeled class.
struct Block {
  std::string label;
  BlockKind kind = BlockKind::Face;
  Eigen::Index begin = 0;
  Eigen::Index end = 0;

  Eigen::Index size() const { return end - begin; }
  bool operator==(const Block&) const = default;
};

/// Column-stacked, unit-norm atoms partitioned into labeled blocks.
/// Face blocks always precede occlusion blocks.
class BlockedDictionary {
 public:
  BlockedDictionary() = default;

  /// Columns are l2-normalized here; a zero column is rejected.
  BlockedDictionary(Matrix atoms, std::vector<Block> blocks, int height = 0, int width = 0)
      : atoms_(std::move(atoms)), blocks_(std::move(blocks)), height_(height), width_(width),
        id_(next_id()) {
    for (Eigen::Index j = 0; j < atoms_.cols(); ++j) {
      const double n = atoms_.col(j).norm();
      if (n == 0.0) throw Error(ErrorCode::ZeroNorm, "dictionary column " + std::to_string(j) + " is zero");
      atoms_.col(j) /= n;
    }
    if (height_ == 0 && width_ == 0) {
      height_ = int(atoms_.rows());
      width_ = 1;
    }
    if (Eigen::Index(height_) * width_ != atoms_.rows())
      throw Error(ErrorCode::BadDims, "dictionary shape does not match feature dimension");
    check_blocks();
  }

  const Matrix& atoms() const { return atoms_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Eigen::Index m() const { return atoms_.rows(); }
  Eigen::Index n() const { return atoms_.cols(); }
  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t id() const { return id_; }

  const Block& block(const std::string& label) const {
    for (const auto& b : blocks_)
      if (b.label == label) return b;
    throw Error(ErrorCode::UnknownLabel, "no block labeled '" + label + "'");
  }
  bool has_block(const std::string& label) const {
    return std::any_of(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.label == label; });
  }

  std::vector<Block> blocks_of(BlockKind kind) const {
    std::vector<Block> out;
    for (const auto& b : blocks_)
      if (b.kind == kind) out.push_back(b);
    return out;
  }
  std::size_t count(BlockKind kind) const { return blocks_of(kind).size(); }

  /// Columns of one block, packaged as a single-block dictionary.
  BlockedDictionary sub_dictionary(const std::string& label) const {
    const Block& b = block(label);
    return BlockedDictionary(atoms_.middleCols(b.begin, b.size()), {{b.label, b.kind, 0, b.size()}}, height_,
                             width_);
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  void check_blocks() const {
    Eigen::Index next = 0;
    bool seen_occlusion = false;
    std::set<std::string> labels;
    for (const auto& b : blocks_) {
      if (b.begin != next || b.end <= b.begin)
        throw Error(ErrorCode::BadDims, "blocks must be contiguous, non-empty and ordered");
      if (!labels.insert(b.label).second) throw Error(ErrorCode::DuplicateLabel, "duplicate block '" + b.label + "'");
      if (b.kind == BlockKind::Occlusion) seen_occlusion = true;
      else if (seen_occlusion) throw Error(ErrorCode::BadDims, "face blocks must precede occlusion blocks");
      next = b.end;
    }
    if (next != atoms_.cols()) throw Error(ErrorCode::BadDims, "blocks do not cover every column");
  }

  Matrix atoms_;
  std::vector<Block> blocks_;
  int height_ = 0;
  int width_ = 0;
  std::uint64_t id_ = 0;
};

/// Coefficients aligned with a dictionary's columns.
struct SparseCoefficients {
  Vector values;
  std::uint64_t dict_id = 0;

  SparseCoefficients() = default;
  SparseCoefficients(Vector v, std::uint64_t id) : values(std::move(v)), dict_id(id) {}
  SparseCoefficients(const BlockedDictionary& dict, Vector v) : values(std::move(v)), dict_id(dict.id()) {
    if (values.size() != dict.n()) throw Error(ErrorCode::DimMismatch, "coefficient length != atom count");
  }

  Vector block_values(const BlockedDictionary& dict, const std::string& label) const {
    const Block& b = dict.block(label);
    return values.segment(b.begin, b.size());
  }
};

/// Binary support over the image grid: 1 = non-occluded, 0 = occluded.
struct OcclusionMask {
  std::vector<std::uint8_t> support;
  int height = 0;
  int width = 0;

  OcclusionMask() = default;
  OcclusionMask(std::vector<std::uint8_t> s, int h, int w) : support(std::move(s)), height(h), width(w) {
    if (support.size() != std::size_t(h) * std::size_t(w))
      throw Error(ErrorCode::BadDims, "mask length does not match shape");
    for (auto v : support)
      if (v > 1) throw Error(ErrorCode::BadDims, "mask values must be 0 or 1");
  }
  static OcclusionMask ones(int h, int w) { return {std::vector<std::uint8_t>(std::size_t(h) * w, 1), h, w}; }

  std::size_t size() const { return support.size(); }
  std::size_t count_supported() const { return std::size_t(std::count(support.begin(), support.end(), 1)); }
  std::size_t count_occluded() const { return size() - count_supported(); }
  bool operator==(const OcclusionMask&) const = default;
};

/// Intersection-over-union of the occluded (zero) sets; 1 when both are empty.
inline double occluded_iou(const OcclusionMask& a, const OcclusionMask& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool oa = a.support[i] == 0, ob = b.support[i] == 0;
    inter += (oa && ob);
    uni += (oa || ob);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline SparseCoefficients block_select(const SparseCoefficients& coef, const BlockedDictionary& dict,
                                       const std::string& label) {
  if (coef.values.size() != dict.n()) throw Error(ErrorCode::DimMismatch, "coefficient length != atom count");
  const Block& b = dict.block(label);
  SparseCoefficients out(Vector::Zero(coef.values.size()), coef.dict_id);
  out.values.segment(b.begin, b.size()) = coef.values.segment(b.begin, b.size());
  return out;
}

/// ||u - dict * masked(coef)||_2, keeping only blocks named in keep_labels.
inline double residual(const Vector& u, const BlockedDictionary& dict, const SparseCoefficients& coef,
                       const std::set<std::string>& keep_labels) {
  if (u.size() != dict.m() || coef.values.size() != dict.n())
    throw Error(ErrorCode::DimMismatch, "residual operands disagree in size");
  Vector r = u;
  for (const auto& b : dict.blocks()) {
    if (!keep_labels.count(b.label)) continue;
    r.noalias() -= dict.atoms().middleCols(b.begin, b.size()) * coef.values.segment(b.begin, b.size());
  }
  for (const auto& l : keep_labels)
    if (!dict.has_block(l)) throw Error(ErrorCode::UnknownLabel, "no block labeled '" + l + "'");
  return r.norm();
}

inline double residual(const ImageVector& u, const BlockedDictionary& dict, const SparseCoefficients& coef,
                       const std::set<std::string>& keep_labels) {
  return residual(u.data, dict, coef, keep_labels);
}

inline std::set<std::string> all_labels(const BlockedDictionary& dict) {
  std::set<std::string> s;
  for (const auto& b : dict.blocks()) s.insert(b.label);
  return s;
}

/// Labels reported when a decision is withheld.
inline const std::string kRejected = "REJECTED";
inline const std::string kNone = "NONE";

struct ClassificationOutcome {
  std::string face_label;
  std::string occlusion_label;
  // Kept in dictionary block order.
  std::vector<std::pair<std::string, double>> face_residuals;
  std::vector<std::pair<std::string, double>> occlusion_residuals;
  std::optional<double> rdi_face;
  std::optional<double> rdi_occlusion;
  SparseCoefficients coefficients;
  // Argmin labels before rejection is applied.
  std::string best_face;
  std::string best_occlusion;
};

}  // namespace soc
