#pragma once

// Classification over a compound dictionary R = [D, B]: code the test image,
// score every face class and occlusion category by its class-restricted
// residual, and reject inputs whose residuals are spread too evenly.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "soc/core.hpp"
#include "soc/solvers.hpp"

namespace soc {

enum class SparsityMode { L1, Structured };

inline const char* to_string(SparsityMode m) { return m == SparsityMode::L1 ? "l1" : "structured"; }

inline SparsityMode parse_sparsity_mode(const std::string& s) {
  if (s == "l1") return SparsityMode::L1;
  if (s == "structured") return SparsityMode::Structured;
  throw Error(ErrorCode::BadConfig, "unknown sparsity mode '" + s + "'");
}

struct ClassifierConfig {
  SparsityMode sparsity_mode = SparsityMode::Structured;
  SolverConfig solver;
  // When set, solver.lambda is replaced by sqrt(mean face block size / mean occlusion block size).
  bool auto_lambda = true;
  double theta_face = 0.9;
  double theta_occlusion = 0.9;
  bool baseline_identity_occlusion = false;

  void validate() const {
    solver.validate();
    if (!(theta_face > 0.0 && theta_face <= 1.0) || !(theta_occlusion > 0.0 && theta_occlusion <= 1.0))
      throw Error(ErrorCode::BadConfig, "rejection thresholds must lie in (0,1]");
  }
};

/// Concatenates face dictionaries then occlusion dictionaries; labels are kept,
/// and every block of an occlusion dictionary is marked as an occlusion block.
inline BlockedDictionary build_compound(const std::vector<BlockedDictionary>& face_dicts,
                                        const std::vector<BlockedDictionary>& occ_dicts) {
  if (face_dicts.empty() && occ_dicts.empty()) throw Error(ErrorCode::BadDims, "nothing to concatenate");
  const BlockedDictionary& first = face_dicts.empty() ? occ_dicts.front() : face_dicts.front();
  const Eigen::Index m = first.m();
  Eigen::Index n = 0;
  for (const auto* list : {&face_dicts, &occ_dicts})
    for (const auto& d : *list) {
      if (d.m() != m) throw Error(ErrorCode::DimMismatch, "dictionaries disagree in feature dimension");
      n += d.n();
    }
  Matrix atoms(m, n);
  std::vector<Block> blocks;
  Eigen::Index at = 0;
  auto append = [&](const BlockedDictionary& d, std::optional<BlockKind> force) {
    atoms.middleCols(at, d.n()) = d.atoms();
    for (const auto& b : d.blocks()) {
      for (const auto& existing : blocks)
        if (existing.label == b.label) throw Error(ErrorCode::DuplicateLabel, "duplicate block '" + b.label + "'");
      blocks.push_back({b.label, force.value_or(b.kind), at + b.begin, at + b.end});
    }
    at += d.n();
  };
  for (const auto& d : face_dicts) {
    for (const auto& b : d.blocks())
      if (b.kind != BlockKind::Face) throw Error(ErrorCode::BadDims, "face dictionary carries an occlusion block");
    append(d, std::nullopt);
  }
  for (const auto& d : occ_dicts) append(d, BlockKind::Occlusion);
  return BlockedDictionary(std::move(atoms), std::move(blocks), first.height(), first.width());
}

/// Residual distribution index: k * min r / sum r.
inline double rdi(const std::vector<double>& residuals) {
  if (residuals.size() < 2) throw Error(ErrorCode::Degenerate, "RDI needs at least two residuals");
  const double sum = std::accumulate(residuals.begin(), residuals.end(), 0.0);
  if (sum <= 0.0) throw Error(ErrorCode::Degenerate, "all residuals are zero");
  return double(residuals.size()) * *std::min_element(residuals.begin(), residuals.end()) / sum;
}

inline double rdi(const std::vector<std::pair<std::string, double>>& residuals) {
  std::vector<double> r;
  for (const auto& [label, v] : residuals) r.push_back(v);
  return rdi(r);
}

/// sqrt(mean face block size / mean occlusion block size); 1 without occlusion blocks.
inline double default_lambda(const BlockedDictionary& R) {
  double face = 0, occ = 0;
  std::size_t nf = 0, no = 0;
  for (const auto& b : R.blocks()) {
    if (b.kind == BlockKind::Face) face += double(b.size()), ++nf;
    else occ += double(b.size()), ++no;
  }
  if (nf == 0 || no == 0) return 1.0;
  return std::sqrt((face / double(nf)) / (occ / double(no)));
}

inline SolveReport code_test_vector(const ImageVector& u, const BlockedDictionary& R, const ClassifierConfig& cfg) {
  SolverConfig sc = cfg.solver;
  if (cfg.auto_lambda) sc.lambda = default_lambda(R);
  return cfg.sparsity_mode == SparsityMode::L1 ? solve_l1_bpdn(u, R, sc) : solve_group_bpdn(u, R, sc);
}

namespace detail {

// Index of the smallest residual; ties resolve to the earlier block.
inline std::size_t argmin(const std::vector<std::pair<std::string, double>>& r) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.size(); ++i)
    if (r[i].second < r[best].second) best = i;
  return best;
}

inline double safe_rdi(const std::vector<std::pair<std::string, double>>& r) {
  try {
    return rdi(r);
  } catch (const Error&) {
    return 1.0;  // every class explains u perfectly: no evidence for any of them
  }
}

}  // namespace detail

/// Decision rules applied to a coefficient vector over R.
inline ClassificationOutcome decide(const ImageVector& u, const BlockedDictionary& R, SparseCoefficients coef,
                                    const ClassifierConfig& cfg) {
  const auto faces = R.blocks_of(BlockKind::Face);
  const auto occs = R.blocks_of(BlockKind::Occlusion);
  if (faces.empty()) throw Error(ErrorCode::BadDims, "compound dictionary has no face block");
  const Matrix& A = R.atoms();

  Vector face_part = Vector::Zero(R.m()), occ_part = Vector::Zero(R.m());
  for (const auto& b : faces) face_part.noalias() += A.middleCols(b.begin, b.size()) * coef.values.segment(b.begin, b.size());
  for (const auto& b : occs) occ_part.noalias() += A.middleCols(b.begin, b.size()) * coef.values.segment(b.begin, b.size());

  ClassificationOutcome out;
  const Vector face_base = u.data - occ_part;
  for (const auto& b : faces) {
    const Vector r = face_base - A.middleCols(b.begin, b.size()) * coef.values.segment(b.begin, b.size());
    out.face_residuals.emplace_back(b.label, r.norm());
  }
  const Vector occ_base = u.data - face_part;
  for (const auto& b : occs) {
    const Vector r = occ_base - A.middleCols(b.begin, b.size()) * coef.values.segment(b.begin, b.size());
    out.occlusion_residuals.emplace_back(b.label, r.norm());
  }

  out.best_face = out.face_residuals[detail::argmin(out.face_residuals)].first;
  out.face_label = out.best_face;
  if (faces.size() >= 2) {
    out.rdi_face = detail::safe_rdi(out.face_residuals);
    if (*out.rdi_face > cfg.theta_face) out.face_label = kRejected;
  }
  if (occs.size() >= 2) {
    out.best_occlusion = out.occlusion_residuals[detail::argmin(out.occlusion_residuals)].first;
    out.occlusion_label = out.best_occlusion;
    out.rdi_occlusion = detail::safe_rdi(out.occlusion_residuals);
    if (*out.rdi_occlusion > cfg.theta_occlusion) out.occlusion_label = kRejected;
  } else {
    out.best_occlusion = kNone;
    out.occlusion_label = kNone;
  }
  out.coefficients = std::move(coef);
  return out;
}

/// Codes u over R (l1 or structured) and applies the face/occlusion decision rules.
inline ClassificationOutcome classify(const ImageVector& u, const BlockedDictionary& R, const ClassifierConfig& cfg) {
  cfg.validate();
  if (u.size() != R.m()) throw Error(ErrorCode::DimMismatch, "test vector and dictionary disagree in m");
  const ImageVector un = u.normalized ? u : normalized(u);
  SolveReport rep = code_test_vector(un, R, cfg);
  return decide(un, R, std::move(rep.coefficients), cfg);
}

/// [D, I_m] with the identity as a single occlusion block labeled "identity".
inline BlockedDictionary with_identity_occlusion(const BlockedDictionary& D) {
  const BlockedDictionary I(Matrix::Identity(D.m(), D.m()), {{"identity", BlockKind::Occlusion, 0, D.m()}},
                            D.height(), D.width());
  return build_compound({D}, {I});
}

/// Plain SRC with an identity occlusion dictionary and l1 coding.
inline ClassificationOutcome classify_src_baseline(const ImageVector& u, const BlockedDictionary& D,
                                                   const ClassifierConfig& cfg) {
  if (!cfg.baseline_identity_occlusion)
    throw Error(ErrorCode::BadConfig, "SRC baseline requires baseline_identity_occlusion");
  ClassifierConfig c = cfg;
  c.sparsity_mode = SparsityMode::L1;
  c.auto_lambda = false;
  const BlockedDictionary faces_only = build_compound({D}, {});
  return classify(u, with_identity_occlusion(faces_only), c);
}

/// Runs fn(i) for i in [0, count) over `threads` workers; results land by index.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace soc
