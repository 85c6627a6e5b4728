#pragma once

// Occlusion-region estimation for a single occluded gallery image: fit the
// image over a small face basis with an l1 error model, then re-estimate the
// error support as a binary MRF solved exactly by one s-t minimum cut, and
// iterate with a decreasing error threshold.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "soc/core.hpp"
#include "soc/maxflow.hpp"
#include "soc/solvers.hpp"

namespace soc {

enum class Neighborhood { Four, Eight };

struct MaskEstimatorConfig {
  int h = 20;
  double beta = 20.0;
  std::vector<double> tau_schedule = {0.005, 0.0045, 0.004, 0.0035, 0.003, 0.0025, 0.002};
  int max_outer_iters = 15;
  Neighborhood neighborhood = Neighborhood::Four;
  // Abort when fewer than this fraction of pixels stay non-occluded.
  double degenerate_floor = 0.05;

  void validate() const {
    if (h < 1) throw Error(ErrorCode::BadConfig, "h must be >= 1");
    if (!(beta >= 0.0)) throw Error(ErrorCode::BadConfig, "beta must be >= 0");
    if (tau_schedule.empty()) throw Error(ErrorCode::BadConfig, "tau schedule is empty");
    for (std::size_t i = 0; i < tau_schedule.size(); ++i) {
      if (!(tau_schedule[i] > 0.0 && tau_schedule[i] < 1.0))
        throw Error(ErrorCode::BadConfig, "tau must lie in (0,1)");
      if (i > 0 && !(tau_schedule[i] < tau_schedule[i - 1]))
        throw Error(ErrorCode::BadConfig, "tau schedule must be strictly decreasing");
    }
    if (max_outer_iters < 1) throw Error(ErrorCode::BadConfig, "max_outer_iters must be >= 1");
    if (!(degenerate_floor >= 0.0 && degenerate_floor < 1.0))
      throw Error(ErrorCode::BadConfig, "degenerate_floor must lie in [0,1)");
  }
};

/// tau from `from` down to `to` (inclusive) in steps of `step`.
inline std::vector<double> tau_range(double from, double to, double step) {
  std::vector<double> out;
  const int n = int(std::floor((from - to) / step + 0.5));
  for (int i = 0; i <= n; ++i) out.push_back(from - step * i);
  return out;
}

struct MaskEstimate {
  OcclusionMask mask;
  ImageVector pattern;  // final error, zeroed on non-occluded pixels
  ImageVector error;    // final full-image error u - basis * x
  SparseCoefficients x;
  int iterations = 0;
  std::vector<double> energy_trace;        // MRF objective of z(t) under the step-t error
  std::vector<double> prior_energy_trace;  // objective of z(t-1) under the same error
  std::vector<double> tau_trace;
  std::vector<OcclusionMask> mask_trace;
  std::vector<ImageVector> error_trace;
};

/// The h atoms with the largest signed correlation D^T u, in descending order
/// (ties to the lower column index), as a single block labeled "lcd".
inline BlockedDictionary build_lcd(const ImageVector& u, const BlockedDictionary& dict, int h) {
  if (h < 1 || h > dict.n()) throw Error(ErrorCode::BadH, "h must lie in [1, n]");
  if (u.size() != dict.m()) throw Error(ErrorCode::DimMismatch, "test vector and dictionary disagree in m");
  const Vector psi = dict.atoms().transpose() * u.data;
  std::vector<Eigen::Index> order(std::size_t(dict.n()));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return psi[a] > psi[b]; });
  Matrix atoms(dict.m(), h);
  for (int k = 0; k < h; ++k) atoms.col(k) = dict.atoms().col(order[std::size_t(k)]);
  return BlockedDictionary(std::move(atoms), {{"lcd", BlockKind::Face, 0, h}}, dict.height(), dict.width());
}

/// Per-pixel log-likelihood of the error given the support bit.
inline double log_likelihood(double e, int z, double tau) {
  const bool small = std::abs(e) <= tau;
  if (z == 1) return small ? -std::log(tau) : std::log(tau);
  return small ? std::log(tau) : 0.0;
}

/// Neighbour pairs (i < j) of a height x width grid, row-major indices.
inline std::vector<std::pair<int, int>> grid_edges(int height, int width, Neighborhood nb) {
  std::vector<std::pair<int, int>> edges;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int i = r * width + c;
      if (c + 1 < width) edges.emplace_back(i, i + 1);
      if (r + 1 < height) edges.emplace_back(i, i + width);
      if (nb == Neighborhood::Eight && r + 1 < height) {
        if (c + 1 < width) edges.emplace_back(i, i + width + 1);
        if (c > 0) edges.emplace_back(i, i + width - 1);
      }
    }
  }
  return edges;
}

/// MRF objective: beta * #agreeing neighbour pairs + sum of pixel log-likelihoods.
inline double support_energy(const OcclusionMask& z, const Vector& e, double beta, double tau, Neighborhood nb) {
  double total = 0.0;
  for (const auto& [i, j] : grid_edges(z.height, z.width, nb))
    if (z.support[std::size_t(i)] == z.support[std::size_t(j)]) total += beta;
  for (std::size_t i = 0; i < z.size(); ++i) total += log_likelihood(e[Eigen::Index(i)], z.support[i], tau);
  return total;
}

/// Exact maximizer of support_energy via one s-t minimum cut.
inline OcclusionMask update_support(const ImageVector& e, double beta, double tau,
                                    Neighborhood nb = Neighborhood::Four) {
  if (!(beta >= 0.0)) throw Error(ErrorCode::BadConfig, "beta must be >= 0");
  const int m = int(e.size());
  MaxFlowGraph<double> g(m);
  for (int i = 0; i < m; ++i) {
    // Minimization costs; source side means z = 1.
    const double cost1 = -log_likelihood(e.data[i], 1, tau);
    const double cost0 = -log_likelihood(e.data[i], 0, tau);
    const double base = std::min(cost0, cost1);
    g.add_terminal(i, cost0 - base, cost1 - base);
  }
  if (beta > 0.0)
    for (const auto& [i, j] : grid_edges(e.height, e.width, nb)) g.add_edge(i, j, beta, beta);
  g.maxflow();
  std::vector<std::uint8_t> z(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    z[std::size_t(i)] = g.segment(i) == MaxFlowGraph<double>::Segment::Source ? 1 : 0;
  return OcclusionMask(std::move(z), e.height, e.width);
}

/// Iterated l1 fitting on the current support plus graph-cut support update.
/// `basis` is either the image's own class sub-dictionary or an LCD.
inline MaskEstimate estimate_mask(const ImageVector& u, const BlockedDictionary& basis,
                                  const MaskEstimatorConfig& cfg, bool keep_history = false) {
  cfg.validate();
  if (u.size() != basis.m()) throw Error(ErrorCode::DimMismatch, "test vector and basis disagree in m");
  const Eigen::Index m = u.size();
  const Matrix& D = basis.atoms();

  MaskEstimate est;
  OcclusionMask z = OcclusionMask::ones(u.height, u.width);
  Vector x = Vector::Zero(basis.n());
  Vector e = u.data;
  const int schedule_len = int(cfg.tau_schedule.size());

  for (int t = 1; t <= cfg.max_outer_iters; ++t) {
    const double tau = cfg.tau_schedule[std::size_t(std::min(t, schedule_len) - 1)];

    std::vector<Eigen::Index> rows;
    rows.reserve(std::size_t(m));
    for (Eigen::Index i = 0; i < m; ++i)
      if (z.support[std::size_t(i)]) rows.push_back(i);
    Matrix d_star(Eigen::Index(rows.size()), D.cols());
    Vector u_star(Eigen::Index(rows.size()));
    for (Eigen::Index k = 0; k < Eigen::Index(rows.size()); ++k) {
      d_star.row(k) = D.row(rows[std::size_t(k)]);
      u_star[k] = u.data[rows[std::size_t(k)]];
    }
    x = l1_regression(d_star, u_star).x;
    e = u.data - D * x;

    const ImageVector err(e, u.height, u.width);
    OcclusionMask next = update_support(err, cfg.beta, tau, cfg.neighborhood);
    est.energy_trace.push_back(support_energy(next, e, cfg.beta, tau, cfg.neighborhood));
    est.prior_energy_trace.push_back(support_energy(z, e, cfg.beta, tau, cfg.neighborhood));
    est.tau_trace.push_back(tau);
    est.iterations = t;
    if (keep_history) {
      est.mask_trace.push_back(next);
      est.error_trace.push_back(err);
    }

    if (double(next.count_supported()) < cfg.degenerate_floor * double(m))
      throw Error(ErrorCode::Degenerate, "non-occluded support collapsed below the floor");

    const bool unchanged = next == z;
    z = std::move(next);
    if (unchanged && t >= schedule_len) break;
  }

  Vector pattern = e;
  for (Eigen::Index i = 0; i < m; ++i)
    if (z.support[std::size_t(i)]) pattern[i] = 0.0;
  est.mask = std::move(z);
  est.pattern = ImageVector(std::move(pattern), u.height, u.width);
  est.error = ImageVector(e, u.height, u.width);
  est.x = SparseCoefficients(std::move(x), basis.id());
  return est;
}

/// The estimated occlusion pattern, unit-normalized for use as an occlusion sample.
inline ImageVector extract_pattern(const MaskEstimate& est) {
  if (est.mask.count_occluded() == 0) throw Error(ErrorCode::ZeroPattern, "mask marks no occluded pixel");
  if (est.pattern.data.norm() == 0.0) throw Error(ErrorCode::ZeroPattern, "occluded residual is zero");
  return normalized(est.pattern);
}

inline ImageVector extract_pattern(const ImageVector& u, const BlockedDictionary& basis, const MaskEstimate& est) {
  if (u.size() != basis.m() || est.pattern.size() != u.size())
    throw Error(ErrorCode::DimMismatch, "pattern extraction operands disagree in m");
  return extract_pattern(est);
}

}  // namespace soc
