#pragma once

// Rejection ROC: an input is accepted when its RDI is at most theta.
// Positives are valid inputs, so TPR is the accepted fraction of valid inputs
// and FPR the accepted fraction of invalid ones.

#include <algorithm>
#include <cmath>
#include <vector>

#include "soc/error.hpp"

namespace soc {

struct RocPoint {
  double theta = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

inline double accepted_fraction(const std::vector<double>& scores, double theta) {
  if (scores.empty()) return 0.0;
  std::size_t n = 0;
  for (double s : scores)
    if (s <= theta) ++n;
  return double(n) / double(scores.size());
}

/// theta = 0, step, ..., 1 (101 points at the default step).
inline std::vector<RocPoint> roc_sweep(const std::vector<double>& valid, const std::vector<double>& invalid,
                                       double step = 0.01) {
  if (!(step > 0.0 && step <= 1.0)) throw Error(ErrorCode::BadConfig, "ROC step must lie in (0,1]");
  const int n = int(std::floor(1.0 / step + 1e-9));
  std::vector<RocPoint> out;
  for (int i = 0; i <= n; ++i) {
    const double theta = std::min(1.0, i * step);
    out.push_back({theta, accepted_fraction(valid, theta), accepted_fraction(invalid, theta)});
  }
  if (out.back().theta < 1.0) out.push_back({1.0, accepted_fraction(valid, 1.0), accepted_fraction(invalid, 1.0)});
  return out;
}

/// Probability that a valid input scores below an invalid one, ties counted half.
inline double rejection_auc(const std::vector<double>& valid, const std::vector<double>& invalid) {
  if (valid.empty() || invalid.empty()) throw Error(ErrorCode::EmptySamples, "AUC needs valid and invalid scores");
  std::vector<double> inv = invalid;
  std::sort(inv.begin(), inv.end());
  double wins = 0.0;
  for (double v : valid) {
    const auto lo = std::lower_bound(inv.begin(), inv.end(), v);
    const auto hi = std::upper_bound(inv.begin(), inv.end(), v);
    wins += double(inv.end() - hi) + 0.5 * double(hi - lo);
  }
  return wins / (double(valid.size()) * double(inv.size()));
}

/// Trapezoidal area under a swept curve, with (0,0) and (1,1) as anchors.
inline double trapezoid_auc(std::vector<RocPoint> curve) {
  curve.push_back({0.0, 0.0, 0.0});
  curve.push_back({1.0, 1.0, 1.0});
  std::sort(curve.begin(), curve.end(),
            [](const RocPoint& a, const RocPoint& b) { return a.fpr < b.fpr || (a.fpr == b.fpr && a.tpr < b.tpr); });
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  return area;
}

}  // namespace soc
