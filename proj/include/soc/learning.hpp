#pragma once

// Occlusion-sample collection (mask-based, projection-residual and
// centroid-difference strategies) and K-SVD compression of a sample set into
// a compact occlusion sub-dictionary.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "soc/core.hpp"
#include "soc/mask.hpp"
#include "soc/solvers.hpp"

namespace soc {

enum class Strategy { Soc, Ssrc, Esrc };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Soc: return "soc";
    case Strategy::Ssrc: return "ssrc";
    case Strategy::Esrc: return "esrc";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "soc") return Strategy::Soc;
  if (s == "ssrc") return Strategy::Ssrc;
  if (s == "esrc") return Strategy::Esrc;
  throw Error(ErrorCode::BadConfig, "unknown strategy '" + s + "'");
}

/// Samples below this norm (before normalization) carry no occlusion.
inline constexpr double kZeroSampleNorm = 1e-6;

/// Column-stacked unit-norm occlusion patterns of one category.
struct OcclusionSampleSet {
  Matrix samples;
  int height = 0;
  int width = 0;
  std::string category;
  Strategy strategy = Strategy::Soc;
  bool labeled = true;
  int dropped = 0;

  Eigen::Index p() const { return samples.cols(); }

  /// Appends a normalized copy of v; near-zero vectors are counted in `dropped` and skipped.
  bool add(const ImageVector& v) {
    const double n = v.data.norm();
    if (n < kZeroSampleNorm) {
      ++dropped;
      return false;
    }
    if (samples.cols() == 0) {
      height = v.height;
      width = v.width;
      samples.resize(v.size(), 0);
    } else if (v.size() != samples.rows()) {
      throw Error(ErrorCode::DimMismatch, "sample dimension differs from the set");
    }
    samples.conservativeResize(Eigen::NoChange, samples.cols() + 1);
    samples.col(samples.cols() - 1) = v.data / n;
    return true;
  }

  /// The set with every sample block-averaged to a smaller grid and renormalized.
  OcclusionSampleSet downsampled(int th, int tw) const {
    OcclusionSampleSet out;
    out.category = category;
    out.strategy = strategy;
    out.labeled = labeled;
    out.dropped = dropped;
    for (Eigen::Index j = 0; j < p(); ++j)
      out.add(downsample(ImageVector(samples.col(j), height, width), th, tw));
    out.height = th;
    out.width = tw;
    return out;
  }

  BlockedDictionary as_dictionary() const {
    if (p() == 0) throw Error(ErrorCode::EmptySamples, "sample set is empty");
    return BlockedDictionary(samples, {{category, BlockKind::Occlusion, 0, p()}}, height, width);
  }
};

/// Mask-based sample: the residual on the estimated occluded region. With a
/// label the class sub-dictionary is the basis, otherwise the LCD of u over dict.
inline ImageVector collect_soc(const ImageVector& u, const BlockedDictionary& dict,
                               const std::optional<std::string>& label, const MaskEstimatorConfig& cfg,
                               MaskEstimate* estimate_out = nullptr) {
  const BlockedDictionary basis = label ? dict.sub_dictionary(*label) : build_lcd(u, dict, cfg.h);
  MaskEstimate est = estimate_mask(u, basis, cfg, estimate_out != nullptr);
  ImageVector pattern = extract_pattern(u, basis, est);
  if (estimate_out) *estimate_out = std::move(est);
  return pattern;
}

/// u - P u, P the orthogonal projector onto span(sub); pseudo-inverse when rank deficient.
inline Vector projection_residual(const Vector& u, const Matrix& sub) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(sub);
  return u - sub * cod.solve(u);
}

/// Projection-residual sample, normalized.
inline ImageVector collect_ssrc(const ImageVector& u, const BlockedDictionary& sub) {
  if (u.size() != sub.m()) throw Error(ErrorCode::DimMismatch, "test vector and sub-dictionary disagree in m");
  Vector r = projection_residual(u.data, sub.atoms());
  if (r.norm() < kZeroSampleNorm) throw Error(ErrorCode::ZeroPattern, "u lies in the span of the sub-dictionary");
  return ImageVector(r / r.norm(), u.height, u.width, true);
}

/// Centroid-difference sample, normalized.
inline ImageVector collect_esrc(const ImageVector& u, const BlockedDictionary& sub) {
  if (u.size() != sub.m()) throw Error(ErrorCode::DimMismatch, "test vector and sub-dictionary disagree in m");
  if (sub.n() == 0) throw Error(ErrorCode::EmptySamples, "sub-dictionary is empty");
  Vector r = u.data - sub.atoms().rowwise().mean();
  if (r.norm() < kZeroSampleNorm) throw Error(ErrorCode::ZeroPattern, "u equals the centroid");
  return ImageVector(r / r.norm(), u.height, u.width, true);
}

struct KsvdConfig {
  int atom_count = 30;
  int sparsity_budget = 5;
  int iterations = 20;
  std::uint64_t seed = 0;
  // l1 penalty for the coding step, relative to max |B^T y|.
  double l1_weight = 0.05;

  void validate(Eigen::Index p) const {
    if (p < 1) throw Error(ErrorCode::EmptySamples, "no occlusion samples to train on");
    if (atom_count < 1 || atom_count > p) throw Error(ErrorCode::BadConfig, "atom_count must lie in [1, p]");
    if (sparsity_budget < 1) throw Error(ErrorCode::BadConfig, "sparsity_budget must be >= 1");
    if (iterations < 0) throw Error(ErrorCode::BadConfig, "iterations must be >= 0");
    if (!(l1_weight > 0.0 && l1_weight < 1.0)) throw Error(ErrorCode::BadConfig, "l1_weight must lie in (0,1)");
  }
};

struct KsvdResult {
  BlockedDictionary dictionary;
  Matrix codes;
  std::vector<double> error_trace;  // ||Y - B X||_F after each iteration (one entry for the initial coding when iterations == 0)
};

namespace detail {

// Sparse code of y over B: l1-penalized support selection, the `budget`
// largest coefficients kept, then a least-squares refit on that support.
inline Vector ksvd_code(const Matrix& B, const Vector& y, int budget, double l1_weight) {
  const Eigen::Index k = B.cols();
  Vector code = Vector::Zero(k);
  const Vector corr = B.transpose() * y;
  const double mu = l1_weight * corr.lpNorm<Eigen::Infinity>();
  if (mu == 0.0) return code;
  std::vector<Group> groups;
  for (Eigen::Index j = 0; j < k; ++j) groups.push_back({j, j + 1, 1.0});
  PenalizedSolver solver(B, y, groups, 1.0);
  const Vector w = solver.solve(mu, 500, 1e-8).w;

  std::vector<Eigen::Index> order;
  for (Eigen::Index j = 0; j < k; ++j)
    if (w[j] != 0.0) order.push_back(j);
  if (order.empty()) {  // fall back to the single best-correlated atom
    Eigen::Index best = 0;
    corr.cwiseAbs().maxCoeff(&best);
    order.push_back(best);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return std::abs(w[a]) > std::abs(w[b]); });
  if (Eigen::Index(order.size()) > budget) order.resize(std::size_t(budget));
  std::sort(order.begin(), order.end());

  Matrix bs(B.rows(), Eigen::Index(order.size()));
  for (Eigen::Index i = 0; i < bs.cols(); ++i) bs.col(i) = B.col(order[std::size_t(i)]);
  const Vector ws = Eigen::CompleteOrthogonalDecomposition<Matrix>(bs).solve(y);
  for (Eigen::Index i = 0; i < bs.cols(); ++i) code[order[std::size_t(i)]] = ws[i];
  return code;
}

}  // namespace detail

/// K-SVD over a sample set; single occlusion block labeled with the set's category.
inline KsvdResult ksvd_train(const OcclusionSampleSet& set, const KsvdConfig& cfg) {
  cfg.validate(set.p());
  const Matrix& Y = set.samples;
  const Eigen::Index p = Y.cols();
  const Eigen::Index k = cfg.atom_count;

  // Seeded Fisher-Yates over sample indices; the first k become the initial atoms.
  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) idx[std::size_t(i)] = i;
  for (Eigen::Index i = p - 1; i > 0; --i) std::swap(idx[std::size_t(i)], idx[std::size_t(rng() % std::uint64_t(i + 1))]);
  // Atoms are sign-fixed so that their largest-magnitude entry is positive.
  Matrix B(Y.rows(), k);
  Vector flip(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    B.col(j) = Y.col(idx[std::size_t(j)]);
    Eigen::Index peak = 0;
    B.col(j).cwiseAbs().maxCoeff(&peak);
    flip[j] = B(peak, j) < 0.0 ? -1.0 : 1.0;
    B.col(j) *= flip[j];
  }

  KsvdResult res;
  Matrix X = Matrix::Zero(k, p);
  if (cfg.iterations == 0) {
    for (Eigen::Index j = 0; j < k; ++j) X(j, idx[std::size_t(j)]) = flip[j];
    res.error_trace.push_back((Y - B * X).norm());
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    const Matrix B_prev = B, X_prev = X;
    const double err_prev = it == 0 ? std::numeric_limits<double>::infinity() : res.error_trace.back();

    // Sparse coding; a new code is kept only if it represents its sample better.
    for (Eigen::Index i = 0; i < p; ++i) {
      const Vector code = detail::ksvd_code(B, Y.col(i), cfg.sparsity_budget, cfg.l1_weight);
      const double e_new = (Y.col(i) - B * code).squaredNorm();
      const double e_old = (Y.col(i) - B * X.col(i)).squaredNorm();
      if (it == 0 || e_new < e_old) X.col(i) = code;
    }

    // Atom-by-atom rank-1 updates on the residual of each atom's users.
    for (Eigen::Index j = 0; j < k; ++j) {
      std::vector<Eigen::Index> users;
      for (Eigen::Index i = 0; i < p; ++i)
        if (X(j, i) != 0.0) users.push_back(i);
      if (users.empty()) {
        // Dead atom: replace with the worst-represented sample.
        Eigen::Index worst = 0;
        (Y - B * X).colwise().squaredNorm().maxCoeff(&worst);
        B.col(j) = Y.col(worst);
        continue;
      }
      const Eigen::Index q = Eigen::Index(users.size());
      Matrix E(Y.rows(), q);
      Vector xr(q);
      for (Eigen::Index c = 0; c < q; ++c) {
        const Eigen::Index i = users[std::size_t(c)];
        xr[c] = X(j, i);
        E.col(c) = Y.col(i) - B * X.col(i) + B.col(j) * xr[c];
      }
      Eigen::SelfAdjointEigenSolver<Matrix> eig(E.transpose() * E);
      const Vector v = eig.eigenvectors().col(q - 1);
      const double sigma = std::sqrt(std::max(0.0, eig.eigenvalues()[q - 1]));
      if (sigma <= 0.0) continue;
      Vector atom = E * v / sigma;
      Vector row = sigma * v;
      Eigen::Index peak = 0;
      atom.cwiseAbs().maxCoeff(&peak);
      if (atom[peak] < 0.0) {
        atom = -atom;
        row = -row;
      }
      const double before = (E - B.col(j) * xr.transpose()).squaredNorm();
      const double after = (E - atom * row.transpose()).squaredNorm();
      if (after > before) continue;
      B.col(j) = atom.normalized();
      for (Eigen::Index c = 0; c < q; ++c) X(j, users[std::size_t(c)]) = row[c] * atom.norm();
    }

    double err = (Y - B * X).norm();
    if (err > err_prev) {  // rounding only; keep the previous iterate
      B = B_prev;
      X = X_prev;
      err = err_prev;
    }
    res.error_trace.push_back(err);
  }

  res.dictionary = BlockedDictionary(B, {{set.category, BlockKind::Occlusion, 0, k}}, set.height, set.width);
  res.codes = std::move(X);
  return res;
}

/// Descending eigenvalues of the sample Gram matrix Y^T Y.
inline std::vector<double> spectrum(const OcclusionSampleSet& set) {
  if (set.p() < 1) throw Error(ErrorCode::EmptySamples, "sample set is empty");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(set.samples.transpose() * set.samples, Eigen::EigenvaluesOnly);
  std::vector<double> out(eig.eigenvalues().data(), eig.eigenvalues().data() + eig.eigenvalues().size());
  for (double& v : out) v = std::max(0.0, v);
  std::sort(out.rbegin(), out.rend());
  return out;
}

}  // namespace soc
