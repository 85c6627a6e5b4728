#pragma once

// Convex coders over a blocked dictionary R:
//
//   l1 basis pursuit denoising     min ||w||_1                          s.t. ||u - Rw||_2 <= eps
//   group basis pursuit denoising  min sum_i ||x_i||_q + lam sum_t ||c_t||_q  s.t. ||u - Rw||_2 <= eps
//   l1 error fitting               min ||e||_1  s.t. u = Dx + e
//
// The constrained problems are solved through their penalized form
//   min 1/2 ||u - Rw||^2 + mu * penalty(w)
// exactly: a weighted lasso homotopy for l1 penalties and an active-set
// Newton method for group penalties. ADMM (cached Cholesky factor, soft or
// block shrinkage) is the fallback when neither certifies an optimum. For
// separable penalties the homotopy stops directly at the residual bound;
// otherwise a bracketing search over mu drives the residual into
// [(1 - band) eps, eps].

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "soc/core.hpp"

namespace soc {

struct SolverConfig {
  double epsilon = 0.05;  // residual bound on unit-norm inputs
  double lambda = 1.0;    // weight on occlusion groups
  double q_norm = 2.0;    // within-group norm; 1 and 2 are supported
  int max_iters = 2000;   // ADMM iterations per penalized solve
  double tol = 1e-6;      // relative iterate change

  void validate() const {
    if (!(epsilon >= 0.0)) throw Error(ErrorCode::BadConfig, "epsilon must be >= 0");
    if (!(lambda > 0.0)) throw Error(ErrorCode::BadConfig, "lambda must be > 0");
    if (!(q_norm == 1.0 || q_norm == 2.0)) throw Error(ErrorCode::BadConfig, "q_norm must be 1 or 2");
    if (max_iters < 1) throw Error(ErrorCode::BadConfig, "max_iters must be >= 1");
    if (!(tol > 0.0)) throw Error(ErrorCode::BadConfig, "tol must be > 0");
  }
};

struct SolveReport {
  SparseCoefficients coefficients;
  int iterations = 0;
  double final_residual = 0.0;
  double objective = 0.0;  // penalty value of the returned coefficients
  bool converged = false;
  double penalty_weight = 0.0;  // mu of the penalized problem that produced the answer
  std::vector<double> objective_trace;  // best penalized objective per iteration of the last solve
};

/// One penalty group: columns [begin, end) weighted by `weight`.
struct Group {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  double weight = 1.0;
};

namespace detail {

inline double group_penalty(const Vector& w, const std::vector<Group>& groups, double q) {
  double p = 0.0;
  for (const auto& g : groups) {
    const auto seg = w.segment(g.begin, g.end - g.begin);
    p += g.weight * (q == 1.0 ? seg.lpNorm<1>() : seg.norm());
  }
  return p;
}

inline void group_shrink(Vector& v, const std::vector<Group>& groups, double q, double kappa) {
  for (const auto& g : groups) {
    auto seg = v.segment(g.begin, g.end - g.begin);
    const double t = kappa * g.weight;
    if (q == 1.0) {
      for (Eigen::Index i = 0; i < seg.size(); ++i) {
        const double a = seg[i];
        seg[i] = a > t ? a - t : (a < -t ? a + t : 0.0);
      }
    } else {
      const double n = seg.norm();
      if (n <= t) seg.setZero();
      else seg *= (1.0 - t / n);
    }
  }
}

// Weighted lasso path  min 1/2||u - Rw||^2 + mu * sum_j a_j |w_j|  followed
// from mu_max downward. The solution is piecewise linear in mu, so each step
// jumps exactly to the next event: an atom joining, an atom leaving, the
// residual reaching `eps`, or mu reaching `mu_stop`.
struct PathResult {
  Vector w;
  double mu = 0.0;
  int steps = 0;
  bool ok = false;
};

inline PathResult lasso_path(const Matrix& R, const Matrix& gram, const Vector& u, const Vector& a, double eps,
                             double mu_stop) {
  const Eigen::Index n = R.cols(), m = R.rows();
  PathResult out;
  out.w = Vector::Zero(n);
  Vector r = u;
  Vector c = R.transpose() * r;
  double mu = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) mu = std::max(mu, std::abs(c[j]) / a[j]);
  out.mu = mu;
  if (mu == 0.0 || mu <= mu_stop || r.norm() <= eps) {
    out.mu = std::max(mu, mu_stop);
    out.ok = true;
    return out;
  }
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  const double tie = 1e-12 * scale;
  std::vector<Eigen::Index> active;
  std::vector<char> in(std::size_t(n), 0);
  Vector sign = Vector::Zero(n);
  // Atoms that left (or were refused) at the current mu; cleared once mu moves.
  std::vector<char> blocked(std::size_t(n), 0);
  // Atoms that joined at the current mu and therefore sit exactly at zero.
  std::vector<char> fresh(std::size_t(n), 0);
  const int max_steps = int(8 * (n + m) + 16);
  for (int step = 0; step < max_steps; ++step) {
    out.steps = step + 1;
    // Atoms already at the threshold join before the direction is formed.
    Eigen::Index join_now = -1;
    double best_gap = -1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (in[std::size_t(j)] || blocked[std::size_t(j)]) continue;
      const double gap = std::abs(c[j]) - (a[j] * mu - tie);
      if (gap >= 0.0 && gap > best_gap) best_gap = gap, join_now = j;
    }
    if (join_now >= 0) {
      active.push_back(join_now);
      in[std::size_t(join_now)] = 1;
      fresh[std::size_t(join_now)] = 1;
      sign[join_now] = c[join_now] > 0 ? 1.0 : -1.0;
    }
    const Eigen::Index k = Eigen::Index(active.size());
    if (k == 0 || k > m) return out;
    Matrix ga(k, k);
    Vector as(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index ji = active[std::size_t(i)];
      for (Eigen::Index l = 0; l < k; ++l) ga(i, l) = gram(ji, active[std::size_t(l)]);
      as[i] = a[ji] * sign[ji];
    }
    Eigen::LDLT<Matrix> ldlt(ga);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) return out;
    const Vector v = ldlt.solve(as);  // dw_A / d(-mu)
    // Current point: path coefficients carried forward exactly; the residual
    // and correlations are recomputed from them to keep drift out.
    Vector wa(k);
    for (Eigen::Index i = 0; i < k; ++i) wa[i] = out.w[active[std::size_t(i)]];
    {
      // A fresh atom whose direction has the wrong sign would leave at once:
      // refuse it at this mu.
      Eigen::Index refuse = -1;
      for (Eigen::Index i = 0; i < k && refuse < 0; ++i)
        if (fresh[std::size_t(active[std::size_t(i)])] && v[i] * as[i] <= 0.0) refuse = i;
      if (refuse >= 0) {
        const Eigen::Index j = active[std::size_t(refuse)];
        active.erase(active.begin() + refuse);
        in[std::size_t(j)] = 0;
        fresh[std::size_t(j)] = 0;
        sign[j] = 0.0;
        out.w[j] = 0.0;
        blocked[std::size_t(j)] = 1;
        continue;
      }
    }
    r = u - R * out.w;
    c.noalias() = R.transpose() * r;
    Vector q = Vector::Zero(m);
    for (Eigen::Index i = 0; i < k; ++i) q.noalias() += v[i] * R.col(active[std::size_t(i)]);
    const Vector d = R.transpose() * q;

    double delta = mu - mu_stop;
    Eigen::Index join = -1, leave = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (in[std::size_t(j)]) continue;
      // The atom that just left sits on the threshold; skip its root at zero.
      const double floor = blocked[std::size_t(j)] ? 1e-9 * mu : 0.0;
      for (double sgn : {1.0, -1.0}) {
        // c_j - delta d_j = sgn a_j (mu - delta)
        const double den = d[j] - sgn * a[j];
        if (den == 0.0) continue;
        const double t = (c[j] - sgn * a[j] * mu) / den;
        if (t > floor && t < delta) delta = t, join = j, leave = -1;
      }
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      if (v[i] == 0.0 || wa[i] * v[i] >= 0.0) continue;
      const double t = -wa[i] / v[i];
      if (t < delta) delta = t, leave = i, join = -1;
    }
    bool stop = join < 0 && leave < 0;
    // Residual reaching eps along r - t q.
    const double qq = q.squaredNorm(), rq = r.dot(q), rr = r.squaredNorm();
    if (eps > 0.0 && qq > 0.0) {
      const double disc = rq * rq - qq * (rr - eps * eps);
      if (disc >= 0.0) {
        const double t = (rq - std::sqrt(disc)) / qq;
        if (t >= 0.0 && t <= delta) delta = t, stop = true;
      }
    }
    for (Eigen::Index i = 0; i < k; ++i) out.w[active[std::size_t(i)]] = wa[i] + delta * v[i];
    mu -= delta;
    r.noalias() -= delta * q;
    c.noalias() -= delta * d;
    if (delta > 0.0) {
      std::fill(blocked.begin(), blocked.end(), 0);
      std::fill(fresh.begin(), fresh.end(), 0);
    }
    if (stop) {
      out.mu = mu;
      out.ok = true;
      break;
    }
    if (join >= 0) {
      active.push_back(join);
      in[std::size_t(join)] = 1;
      fresh[std::size_t(join)] = 1;
      sign[join] = c[join] > 0 ? 1.0 : -1.0;
    } else {
      const Eigen::Index j = active[std::size_t(leave)];
      out.w[j] = 0.0;
      sign[j] = 0.0;
      in[std::size_t(j)] = 0;
      active.erase(active.begin() + leave);
      blocked[std::size_t(j)] = 1;
    }
  }
  if (!out.ok) return out;
  // Certify: active correlations at mu with matching sign, inactive below.
  const Vector cf = R.transpose() * (u - R * out.w);
  const double tol = 1e-8 * scale;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (out.w[j] != 0.0) {
      if (std::abs(cf[j] - a[j] * out.mu * (out.w[j] > 0 ? 1.0 : -1.0)) > tol) out.ok = false;
    } else if (std::abs(cf[j]) > a[j] * out.mu + tol) {
      out.ok = false;
    }
  }
  return out;
}

// Active-set Newton for  min 1/2||u - Rw||^2 + mu * sum_g a_g ||w_g||_2.
// Groups are added by largest KKT violation and dropped when their block
// optimum given the rest is zero; the returned point satisfies the KKT
// conditions to a tight tolerance or `solve` reports failure.
class GroupActiveSet {
 public:
  GroupActiveSet(const Matrix& R, const Matrix& gram, const Vector& u, const std::vector<Group>& groups)
      : R_(R), gram_(gram), u_(u), groups_(groups), w_(Vector::Zero(R.cols())),
        on_(groups.size(), 0) {
    Rtu_ = R.transpose() * u;
    scale_ = std::max(1.0, Rtu_.norm());
  }

  bool solve(double mu, Vector& w_out) {
    const int max_outer = int(4 * groups_.size() + 32);
    for (int outer = 0; outer < max_outer; ++outer) {
      steps_ = outer + 1;
      if (!newton(mu)) return false;
      const Vector corr = Rtu_ - gram_ * w_;
      double worst = 0.0;
      std::size_t add = groups_.size();
      for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (on_[g]) continue;
        const auto& gr = groups_[g];
        const double v = corr.segment(gr.begin, gr.end - gr.begin).norm() - mu * gr.weight;
        if (v > worst) worst = v, add = g;
      }
      if (add == groups_.size() || worst <= 1e-10 * scale_) {
        w_out = w_;
        return true;
      }
      const auto& gr = groups_[add];
      const Eigen::Index s = gr.end - gr.begin;
      const Vector dir = corr.segment(gr.begin, s).normalized();
      const double curv = std::max(1e-12, dir.dot(gram_.block(gr.begin, gr.begin, s, s) * dir));
      w_.segment(gr.begin, s) = (worst / curv) * dir;
      on_[add] = 1;
    }
    return false;
  }

  // Outer active-set passes used by the last solve.
  int steps() const { return steps_; }

 private:
  // Zeroes active groups whose block optimum, holding the others fixed, is zero.
  bool drop_dead(double mu) {
    bool dropped = false;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (!on_[g]) continue;
      const auto& gr = groups_[g];
      const Eigen::Index s = gr.end - gr.begin;
      const Vector corr = Rtu_.segment(gr.begin, s) - gram_.middleRows(gr.begin, s) * w_ +
                          gram_.block(gr.begin, gr.begin, s, s) * w_.segment(gr.begin, s);
      if (corr.norm() <= mu * gr.weight || w_.segment(gr.begin, s).norm() == 0.0) {
        w_.segment(gr.begin, s).setZero();
        on_[g] = 0;
        dropped = true;
      }
    }
    return dropped;
  }

  bool newton(double mu) {
    for (int restart = 0; restart < int(groups_.size()) + 4; ++restart) {
      drop_dead(mu);
      std::vector<std::size_t> act;
      std::vector<Eigen::Index> cols;
      for (std::size_t g = 0; g < groups_.size(); ++g)
        if (on_[g]) {
          act.push_back(g);
          for (Eigen::Index j = groups_[g].begin; j < groups_[g].end; ++j) cols.push_back(j);
        }
      if (act.empty()) return true;
      const Eigen::Index k = Eigen::Index(cols.size());
      Matrix ga(k, k);
      Vector rtu(k), wa(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index l = 0; l < k; ++l) ga(i, l) = gram_(cols[std::size_t(i)], cols[std::size_t(l)]);
        rtu[i] = Rtu_[cols[std::size_t(i)]];
        wa[i] = w_[cols[std::size_t(i)]];
      }
      auto value = [&](const Vector& v) {
        double p = 0.0;
        Eigen::Index at = 0;
        for (std::size_t g : act) {
          const Eigen::Index s = groups_[g].end - groups_[g].begin;
          p += groups_[g].weight * v.segment(at, s).norm();
          at += s;
        }
        return 0.5 * v.dot(ga * v) - v.dot(rtu) + mu * p;
      };
      bool hit_zero = false, stalled = false;
      for (int it = 0; it < 100; ++it) {
        Vector grad = ga * wa - rtu;
        Matrix hess = ga;
        Eigen::Index at = 0;
        for (std::size_t g : act) {
          const Eigen::Index s = groups_[g].end - groups_[g].begin;
          const auto seg = wa.segment(at, s);
          const double nrm = seg.norm();
          if (nrm == 0.0) {
            hit_zero = true;
            break;
          }
          const double cc = mu * groups_[g].weight / nrm;
          grad.segment(at, s) += cc * seg;
          hess.block(at, at, s, s).diagonal().array() += cc;
          hess.block(at, at, s, s).noalias() -= (cc / (nrm * nrm)) * (seg * seg.transpose());
          at += s;
        }
        if (hit_zero) break;
        // Stationary to working precision: tiny gradient, or a Newton step
        // that no longer changes the iterate.
        if (grad.norm() <= 1e-11 * scale_ || (grad.norm() <= 1e-8 * scale_ && stalled)) {
          for (Eigen::Index i = 0; i < k; ++i) w_[cols[std::size_t(i)]] = wa[i];
          return true;
        }
        Eigen::LDLT<Matrix> ldlt(hess);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
          hess.diagonal().array() += 1e-12 * hess.diagonal().mean();
          ldlt.compute(hess);
          if (ldlt.info() != Eigen::Success) return false;
        }
        const Vector step = ldlt.solve(grad);
        const double f0 = value(wa), slope = grad.dot(step);
        if (!(slope > 0.0)) return false;
        double t = 1.0;
        Vector next = wa - step;
        int ls = 0;
        for (; ls < 50 && !(value(next) <= f0 - 1e-4 * t * slope); ++ls) {
          t *= 0.5;
          next = wa - t * step;
        }
        if (ls == 50) {
          if (grad.norm() > 1e-8 * scale_) {
            // No descent along the Newton ray: the kink of the smallest group
            // is in the way. Drop that group and let the KKT loop decide.
            std::size_t worst = act.front();
            double smallest = std::numeric_limits<double>::infinity();
            Eigen::Index off = 0;
            for (std::size_t g : act) {
              const Eigen::Index s = groups_[g].end - groups_[g].begin;
              if (const double nn = wa.segment(off, s).norm(); nn < smallest) smallest = nn, worst = g;
              off += s;
            }
            for (Eigen::Index i = 0; i < k; ++i) w_[cols[std::size_t(i)]] = wa[i];
            w_.segment(groups_[worst].begin, groups_[worst].end - groups_[worst].begin).setZero();
            on_[worst] = 0;
            hit_zero = true;
            break;
          }
          next = wa;
        }
        stalled = (next - wa).norm() <= 1e-12 * std::max(1.0, wa.norm());
        wa = next;
        // A group whose block optimum given the rest is zero goes to drop_dead.
        const Vector rest = rtu - ga * wa;
        at = 0;
        for (std::size_t g : act) {
          const Eigen::Index s = groups_[g].end - groups_[g].begin;
          const Vector own = rest.segment(at, s) + ga.block(at, at, s, s) * wa.segment(at, s);
          if (own.norm() <= mu * groups_[g].weight) hit_zero = true;
          at += s;
        }
        if (hit_zero) break;
      }
      for (Eigen::Index i = 0; i < k; ++i)
        if (on_[groups_index(cols[std::size_t(i)])]) w_[cols[std::size_t(i)]] = wa[i];
      if (!hit_zero) return false;
    }
    return false;
  }

  std::size_t groups_index(Eigen::Index col) const {
    for (std::size_t g = 0; g < groups_.size(); ++g)
      if (col >= groups_[g].begin && col < groups_[g].end) return g;
    return groups_.size();
  }

  const Matrix& R_;
  const Matrix& gram_;
  const Vector& u_;
  const std::vector<Group>& groups_;
  Vector Rtu_, w_;
  std::vector<char> on_;
  int steps_ = 0;
  double scale_ = 1.0;
};

/// ADMM for min 1/2||u - Rw||^2 + mu * sum_g w_g ||w_g||_q, warm-startable across mu.
class PenalizedSolver {
 public:
  PenalizedSolver(const Matrix& R, const Vector& u, std::vector<Group> groups, double q)
      : R_(R), u_(u), groups_(std::move(groups)), q_(q), wide_(R.cols() > R.rows()) {
    Rtu_ = R_.transpose() * u_;
    gram_ = wide_ ? Matrix(R_ * R_.transpose()) : Matrix(R_.transpose() * R_);
    z_ = Vector::Zero(R_.cols());
    y_ = Vector::Zero(R_.cols());
    rho_ = std::max(1e-8, gram_.diagonal().mean());
  }

  /// Smallest mu for which w = 0 is optimal.
  double mu_max() const {
    double best = 0.0;
    for (const auto& g : groups_) {
      const auto seg = Rtu_.segment(g.begin, g.end - g.begin);
      const double dual = q_ == 1.0 ? seg.lpNorm<Eigen::Infinity>() : seg.norm();
      best = std::max(best, dual / g.weight);
    }
    return best;
  }

  double objective(const Vector& w, double mu) const {
    return 0.5 * (u_ - R_ * w).squaredNorm() + mu * group_penalty(w, groups_, q_);
  }

  struct Result {
    Vector w;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;
  };

  Result solve(double mu, int max_iters, double tol) {
    Result res;
    if (mu >= mu_max()) {
      z_.setZero();
      y_.setZero();
      res.w = z_;
      res.objective = objective(res.w, mu);
      res.converged = true;
      res.trace.push_back(res.objective);
      return res;
    }
    if (Vector w; solve_exact(mu, w, res.iterations)) {
      accept_polished(res, std::move(w), mu, std::numeric_limits<double>::infinity());
      return res;
    }
    // Rescale the warm-started dual to the new penalty level.
    if (last_mu_ > 0.0) y_ *= mu / last_mu_;
    last_mu_ = mu;

    factor();
    constexpr double kRelax = 1.6;
    const double sqrt_n = std::sqrt(double(R_.cols()));
    Vector best = z_;
    double best_obj = objective(z_, mu);
    Vector x(R_.cols()), z_old(R_.cols());
    for (int it = 1; it <= max_iters; ++it) {
      res.iterations = it;
      solve_quadratic(Rtu_ + rho_ * (z_ - y_), x);
      const Vector x_hat = kRelax * x + (1.0 - kRelax) * z_;
      z_old = z_;
      z_ = x_hat + y_;
      group_shrink(z_, groups_, q_, mu / rho_);
      y_ += x_hat - z_;

      const double obj = objective(z_, mu);
      if (obj <= best_obj) {
        best_obj = obj;
        best = z_;
      }
      res.trace.push_back(best_obj);

      const double r_norm = (x - z_).norm();
      const double s_norm = rho_ * (z_ - z_old).norm();
      const double scale = std::max({1.0, x.norm(), z_.norm()});
      const double eps_pri = tol * (1e-2 * sqrt_n + scale);
      const double eps_dual = tol * (1e-2 * sqrt_n + rho_ * y_.norm() + mu);
      if (r_norm <= eps_pri && s_norm <= eps_dual && (z_ - z_old).norm() <= tol * scale) {
        res.converged = true;
        break;
      }
      if (it % 10 == 0) {
        if (r_norm > 10.0 * s_norm) rescale(2.0);
        else if (s_norm > 10.0 * r_norm) rescale(0.5);
      }
    }
    res.w = best;
    res.objective = best_obj;
    if (Vector w = best; polish(w, mu)) {
      accept_polished(res, std::move(w), mu, best_obj);
      return res;
    }
    return res;
  }

  bool separable() const {
    return q_ == 1.0 ||
           std::all_of(groups_.begin(), groups_.end(), [](const Group& g) { return g.end - g.begin == 1; });
  }

  const Matrix& full_gram() {
    if (full_gram_.size() == 0) full_gram_ = R_.transpose() * R_;
    return full_gram_;
  }

  /// Exact active-set solution at mu (lasso path or group Newton); false
  /// when the method could not certify an optimum.
  bool solve_exact(double mu, Vector& w, int& steps) {
    if (separable()) {
      const PathResult p = lasso_path(R_, full_gram(), u_, atom_weights(), 0.0, mu);
      steps = p.steps;
      if (!p.ok) return false;
      w = p.w;
      return true;
    }
    if (!active_set_) active_set_ = std::make_unique<GroupActiveSet>(R_, full_gram(), u_, groups_);
    const bool ok = active_set_->solve(mu, w);
    steps = active_set_->steps();
    return ok;
  }

  Vector atom_weights() const {
    Vector a(R_.cols());
    for (const auto& g : groups_) a.segment(g.begin, g.end - g.begin).setConstant(g.weight);
    return a;
  }

 private:
  // Installs a KKT-verified optimum and the matching scaled dual for warm starts.
  void accept_polished(Result& res, Vector w, double mu, double best_obj) {
    const double obj = objective(w, mu);
    res.objective = std::min(obj, best_obj);
    res.trace.push_back(res.objective);
    res.converged = true;
    z_ = w;
    y_ = R_.transpose() * (u_ - R_ * w) / rho_;
    res.w = std::move(w);
  }

  void factor() {
    if (factored_rho_ == rho_) return;
    Matrix a = gram_;
    a.diagonal().array() += rho_;
    chol_.compute(a);
    factored_rho_ = rho_;
  }

  // (R^T R + rho I) x = q
  void solve_quadratic(const Vector& q, Vector& x) const {
    if (!wide_) {
      x = chol_.solve(q);
    } else {
      const Vector t = chol_.solve(R_ * q);
      x = (q - R_.transpose() * t) / rho_;
    }
  }

  void rescale(double f) {
    rho_ *= f;
    y_ /= f;
    factor();
  }

  // Exact re-solve on the support detected by ADMM. Separable penalties solve
  // the sign-fixed normal equations; q = 2 groups run damped Newton on the
  // active groups. The result is kept only when the KKT conditions hold, so a
  // successful polish is the exact optimum.
  bool polish(Vector& w, double mu) const {
      return separable() ? polish_separable(w, mu) : polish_groups(w, mu);
  }

  bool polish_separable(Vector& w, double mu) const {
    std::vector<Eigen::Index> support;
    Vector weight(R_.cols());
    for (const auto& g : groups_)
      for (Eigen::Index j = g.begin; j < g.end; ++j) weight[j] = g.weight;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (w[j] != 0.0) support.push_back(j);
    if (support.empty() || Eigen::Index(support.size()) > R_.rows()) return false;
    const Eigen::Index k = Eigen::Index(support.size());
    Matrix rs(R_.rows(), k);
    Vector rhs(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index j = support[std::size_t(i)];
      rs.col(i) = R_.col(j);
      rhs[i] = Rtu_[j] - mu * weight[j] * (w[j] > 0 ? 1.0 : -1.0);
    }
    const Matrix g = rs.transpose() * rs;
    Eigen::LDLT<Matrix> ldlt(g);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    const Vector ws = ldlt.solve(rhs);
    if ((g * ws - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) return false;
    Vector cand = Vector::Zero(w.size());
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index j = support[std::size_t(i)];
      if (ws[i] * w[j] <= 0.0) return false;
      cand[j] = ws[i];
    }
    const Vector corr = R_.transpose() * (u_ - R_ * cand);
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (cand[j] == 0.0 && std::abs(corr[j]) > mu * weight[j] * (1.0 + 1e-9) + 1e-12) return false;
    if (objective(cand, mu) > objective(w, mu) + 1e-14) return false;
    w = cand;
    return true;
  }

  bool polish_groups(Vector& w, double mu) const {
    std::vector<Group> active;
    Eigen::Index k = 0;
    for (const auto& g : groups_)
      if (w.segment(g.begin, g.end - g.begin).norm() > 0.0) {
        active.push_back(g);
        k += g.end - g.begin;
      }
    if (active.empty()) return false;
    Matrix ra(R_.rows(), k);
    Vector wa(k);
    {
      Eigen::Index at = 0;
      for (const auto& g : active) {
        const Eigen::Index s = g.end - g.begin;
        ra.middleCols(at, s) = R_.middleCols(g.begin, s);
        wa.segment(at, s) = w.segment(g.begin, s);
        at += s;
      }
    }
    const Matrix gram = ra.transpose() * ra;
    const Vector rtu = ra.transpose() * u_;
    auto value = [&](const Vector& v) {
      double p = 0.0;
      Eigen::Index at = 0;
      for (const auto& g : active) {
        p += g.weight * v.segment(at, g.end - g.begin).norm();
        at += g.end - g.begin;
      }
      return 0.5 * (u_ - ra * v).squaredNorm() + mu * p;
    };
    const double scale = std::max(1.0, rtu.norm());
    bool done = false;
    for (int it = 0; it < 50 && !done; ++it) {
      Vector grad = gram * wa - rtu;
      Matrix hess = gram;
      Eigen::Index at = 0;
      for (const auto& g : active) {
        const Eigen::Index s = g.end - g.begin;
        const auto seg = wa.segment(at, s);
        const double n = seg.norm();
        if (n == 0.0) return false;
        const double c = mu * g.weight / n;
        grad.segment(at, s) += c * seg;
        hess.block(at, at, s, s).diagonal().array() += c;
        hess.block(at, at, s, s) -= (c / (n * n)) * (seg * seg.transpose());
        at += s;
      }
      if (grad.norm() <= 1e-12 * scale) {
        done = true;
        break;
      }
      Eigen::LDLT<Matrix> ldlt(hess);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
      const Vector step = ldlt.solve(grad);
      const double f0 = value(wa);
      double t = 1.0;
      Vector next;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        next = wa - t * step;
        if (value(next) <= f0 - 1e-4 * t * grad.dot(step)) break;
      }
      if ((next - wa).norm() <= 1e-15 * std::max(1.0, wa.norm())) done = true;
      wa = next;
    }
    if (!done) return false;
    Vector cand = Vector::Zero(w.size());
    {
      Eigen::Index at = 0;
      for (const auto& g : active) {
        cand.segment(g.begin, g.end - g.begin) = wa.segment(at, g.end - g.begin);
        at += g.end - g.begin;
      }
    }
    const Vector corr = R_.transpose() * (u_ - R_ * cand);
    for (const auto& g : groups_) {
      const Eigen::Index s = g.end - g.begin;
      if (cand.segment(g.begin, s).norm() > 0.0) continue;
      if (corr.segment(g.begin, s).norm() > mu * g.weight * (1.0 + 1e-9) + 1e-12) return false;
    }
    if (objective(cand, mu) > objective(w, mu) + 1e-14) return false;
    w = cand;
    return true;
  }

  const Matrix& R_;
  Vector u_;
  std::vector<Group> groups_;
  double q_;
  bool wide_;
  Vector Rtu_;
  Matrix gram_;
  Eigen::LLT<Matrix> chol_;
  double rho_ = 1.0;
  double factored_rho_ = -1.0;
  double last_mu_ = 0.0;
  Vector z_, y_;
  Matrix full_gram_;
  std::unique_ptr<GroupActiveSet> active_set_;
};

// Relative width of the accepted residual band below eps.
inline constexpr double kResidualBand = 1e-3;

inline SolveReport solve_constrained(const Vector& u, const BlockedDictionary& dict, std::vector<Group> groups,
                                     const SolverConfig& cfg, double q) {
  cfg.validate();
  if (u.size() != dict.m()) throw Error(ErrorCode::DimMismatch, "test vector and dictionary disagree in m");
  const Matrix& R = dict.atoms();
  const double eps = cfg.epsilon;

  SolveReport rep;
  auto finish = [&](Vector w, double mu) {
    rep.final_residual = (u - R * w).norm();
    rep.objective = group_penalty(w, groups, q);
    rep.penalty_weight = mu;
    rep.coefficients = SparseCoefficients(std::move(w), dict.id());
    return rep;
  };

  if (u.norm() <= eps) {
    rep.converged = true;
    return finish(Vector::Zero(dict.n()), 0.0);
  }

  PenalizedSolver solver(R, u, groups, q);
  const double mu_max = solver.mu_max();
  // Separable penalties: the lasso path hits the residual bound exactly.
  if (mu_max > 0.0 && solver.separable()) {
    // Aim a hair inside the bound so rounding cannot push the residual over it.
    const double target = std::max(eps, 0.5 * cfg.tol) * (1.0 - 1e-9);
    const PathResult p = lasso_path(R, solver.full_gram(), u, solver.atom_weights(), target, 0.0);
    if (p.ok && (u - R * p.w).norm() <= std::max(eps, 0.5 * cfg.tol)) {
      rep.iterations = p.steps;
      rep.converged = true;
      rep.objective_trace = {group_penalty(p.w, groups, q)};
      return finish(p.w, p.mu);
    }
  }
  if (mu_max == 0.0) {  // u orthogonal to every atom: nothing can reduce the residual
    rep.converged = false;
    return finish(Vector::Zero(dict.n()), 0.0);
  }
  // Feasibility threshold; an exact-fit request (eps = 0) is met to within tol / 2.
  const double eps_f = std::max(eps, 0.5 * cfg.tol);
  const bool refine = eps >= cfg.tol;

  struct Eval {
    double log_mu;
    double residual;
    PenalizedSolver::Result r;
  };
  auto run = [&](double log_mu) {
    auto r = solver.solve(std::exp(log_mu), cfg.max_iters, cfg.tol);
    rep.iterations += r.iterations;
    const double res = (u - R * r.w).norm();
    return Eval{log_mu, res, std::move(r)};
  };

  // The infeasible end of the bracket: mu_max, where w = 0.
  double hi_log = std::log(mu_max), hi_res = u.norm();
  std::optional<Eval> feasible;
  std::optional<Eval> closest;
  for (double log_mu = hi_log - std::log(10.0); log_mu > std::log(mu_max) - 16.0 * std::log(10.0);
       log_mu -= std::log(10.0)) {
    Eval e = run(log_mu);
    if (e.residual <= eps_f) {
      feasible = std::move(e);
      break;
    }
    hi_log = e.log_mu;
    hi_res = e.residual;
    if (!closest || e.residual < closest->residual) closest = std::move(e);
  }
  if (!feasible) {
    rep.converged = false;
    if (!closest) return finish(Vector::Zero(dict.n()), mu_max);
    rep.objective_trace = closest->r.trace;
    return finish(closest->r.w, std::exp(closest->log_mu));
  }

  // Illinois regula falsi on residual(log mu) - target.
  const double target = eps_f * (1.0 - 0.5 * kResidualBand);
  double lo_log = feasible->log_mu, lo_g = feasible->residual - target;
  double hi_g = hi_res - target;
  int side = 0;
  for (int step = 0; refine && step < 60; ++step) {
    if (feasible->residual >= (1.0 - kResidualBand) * eps_f) break;
    if (hi_log - lo_log < 1e-12) break;
    double t = lo_log - lo_g * (hi_log - lo_log) / (hi_g - lo_g);
    if (!(t > lo_log && t < hi_log)) t = 0.5 * (lo_log + hi_log);
    Eval e = run(t);
    const double g = e.residual - target;
    if (e.residual <= eps_f) {
      lo_log = t;
      lo_g = g;
      if (side == -1) hi_g *= 0.5;
      side = -1;
      feasible = std::move(e);
    } else {
      hi_log = t;
      hi_g = g;
      if (side == 1) lo_g *= 0.5;
      side = 1;
    }
  }
  rep.converged = feasible->r.converged;
  rep.objective_trace = feasible->r.trace;
  return finish(feasible->r.w, std::exp(feasible->log_mu));
}

}  // namespace detail

/// min ||w||_1 s.t. ||u - Rw||_2 <= eps.
inline SolveReport solve_l1_bpdn(const ImageVector& u, const BlockedDictionary& dict, const SolverConfig& cfg) {
  std::vector<Group> groups;
  groups.reserve(std::size_t(dict.n()));
  for (Eigen::Index j = 0; j < dict.n(); ++j) groups.push_back({j, j + 1, 1.0});
  return detail::solve_constrained(u.data, dict, std::move(groups), cfg, 1.0);
}

/// Penalty groups for the structured coder: one per block, face weight 1, occlusion weight lambda.
inline std::vector<Group> block_groups(const BlockedDictionary& dict, double lambda) {
  std::vector<Group> groups;
  for (const auto& b : dict.blocks())
    groups.push_back({b.begin, b.end, b.kind == BlockKind::Face ? 1.0 : lambda});
  return groups;
}

/// min sum_i ||x_i||_q + lambda sum_t ||c_t||_q s.t. ||u - Rw||_2 <= eps.
inline SolveReport solve_group_bpdn(const ImageVector& u, const BlockedDictionary& dict, const SolverConfig& cfg) {
  if (dict.blocks().empty()) throw Error(ErrorCode::BadConfig, "group coding needs at least one block");
  cfg.validate();
  return detail::solve_constrained(u.data, dict, block_groups(dict, cfg.lambda), cfg, cfg.q_norm);
}

struct L1Fit {
  Vector x;
  Vector e;  // u - D x, exactly
  int iterations = 0;
  bool rank_deficient = false;
};

namespace detail {

// ADMM on min ||e||_1 s.t. e = u - D x; used when D is rank deficient.
inline Vector l1_admm(const Matrix& D, const Vector& u, int max_iters, double tol, int& iterations) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(D);
  auto l1 = [&](const Vector& x) { return (u - D * x).lpNorm<1>(); };
  Vector x = cod.solve(u);
  Vector e = u - D * x;
  Vector y = Vector::Zero(u.size());
  double rho = 1.0 / std::max(1e-12, e.cwiseAbs().mean());
  Vector best_x = x;
  double best = l1(x);
  const double scale = std::max(1.0, u.norm());
  for (int it = 1; it <= max_iters; ++it) {
    iterations = it;
    const Vector x_old = x;
    x = cod.solve(u - e - y);
    const Vector dx = D * x;
    const Vector e_old = e;
    const Vector v = u - dx - y;
    const double t = 1.0 / rho;
    e = v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
    y += dx + e - u;
    if (const double obj = l1(x); obj < best) {
      best = obj;
      best_x = x;
    }
    const double r_norm = (dx + e - u).norm();
    const double s_norm = rho * (e - e_old).norm();
    if (r_norm <= tol * scale && s_norm <= tol * scale * rho && (x - x_old).norm() <= tol * scale) break;
    if (it % 10 == 0) {
      if (r_norm > 10.0 * s_norm) {
        rho *= 2.0;
        y /= 2.0;
      } else if (s_norm > 10.0 * r_norm) {
        rho /= 2.0;
        y *= 2.0;
      }
    }
  }
  return best_x;
}

// Vertex-walking descent for full-column-rank D. A vertex interpolates h rows
// (the basis A); at each step the basis row whose dual multiplier exceeds 1 in
// magnitude is released, and an exact line search (a weighted median over the
// breakpoints) picks the entering row.
inline Vector l1_vertex_descent(const Matrix& D, const Vector& u, int max_steps, int& steps) {
  const Eigen::Index m = D.rows(), h = D.cols();
  Vector x = Eigen::CompleteOrthogonalDecomposition<Matrix>(D).solve(u);

  // Initial basis: the best-fitting rows that are linearly independent.
  Vector r = u - D * x;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return std::abs(r[a]) < std::abs(r[b]); });
  std::vector<Eigen::Index> basis;
  Matrix q(h, h);  // orthonormal rows spanning the accepted rows
  for (Eigen::Index i : order) {
    if (Eigen::Index(basis.size()) == h) break;
    Vector v = D.row(i).transpose();
    const double n0 = v.norm();
    for (Eigen::Index k = 0; k < Eigen::Index(basis.size()); ++k) v -= q.row(k).dot(v) * q.row(k).transpose();
    if (v.norm() <= 1e-9 * std::max(1.0, n0)) continue;
    q.row(Eigen::Index(basis.size())) = v.normalized().transpose();
    basis.push_back(i);
  }
  if (Eigen::Index(basis.size()) < h) return x;

  std::vector<char> in_basis(std::size_t(m), 0);
  Matrix da(h, h);
  Vector ua(h);
  for (Eigen::Index k = 0; k < h; ++k) {
    da.row(k) = D.row(basis[std::size_t(k)]);
    ua[k] = u[basis[std::size_t(k)]];
    in_basis[std::size_t(basis[std::size_t(k)])] = 1;
  }
  Eigen::PartialPivLU<Matrix> lu(da);
  x = lu.solve(ua);

  std::vector<std::pair<double, double>> breaks;  // (t, |a|)
  for (steps = 0; steps < max_steps; ++steps) {
    r = u - D * x;
    for (Eigen::Index k = 0; k < h; ++k) r[basis[std::size_t(k)]] = 0.0;
    Vector g = Vector::Zero(h);
    for (Eigen::Index j = 0; j < m; ++j)
      if (!in_basis[std::size_t(j)] && r[j] != 0.0) g += (r[j] > 0 ? 1.0 : -1.0) * D.row(j).transpose();
    const Vector lambda = -Matrix(da.transpose()).partialPivLu().solve(g);

    // Candidate rows to release, most violated first.
    std::vector<Eigen::Index> cand;
    for (Eigen::Index k = 0; k < h; ++k)
      if (std::abs(lambda[k]) > 1.0 + 1e-10) cand.push_back(k);
    if (cand.empty()) break;
    std::stable_sort(cand.begin(), cand.end(), [&](Eigen::Index a, Eigen::Index b) { return std::abs(lambda[a]) > std::abs(lambda[b]); });

    bool moved = false;
    for (Eigen::Index k : cand) {
      const double sigma = lambda[k] > 0 ? -1.0 : 1.0;
      const Vector delta = lu.solve(sigma * Vector::Unit(h, k));
      const Vector a = D * delta;
      double slope = 0.0;
      breaks.clear();
      for (Eigen::Index j = 0; j < m; ++j) {
        const double aj = a[j];
        if (aj == 0.0) continue;
        if (r[j] == 0.0) {
          if (in_basis[std::size_t(j)] && j != basis[std::size_t(k)]) continue;
          slope += std::abs(aj);
        } else {
          slope -= (r[j] > 0 ? 1.0 : -1.0) * aj;
          const double t = r[j] / aj;
          if (t > 0.0) breaks.emplace_back(t, std::abs(aj));
        }
      }
      if (slope >= -1e-12) continue;
      std::sort(breaks.begin(), breaks.end());
      Eigen::Index entering = -1;
      double t_star = 0.0;
      for (const auto& [t, w] : breaks) {
        slope += 2.0 * w;
        if (slope >= 0.0) {
          t_star = t;
          break;
        }
      }
      if (t_star <= 0.0) continue;
      // The entering row is the one whose breakpoint is t_star.
      double best_gap = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m; ++j) {
        if (in_basis[std::size_t(j)] || a[j] == 0.0 || r[j] == 0.0) continue;
        const double gap = std::abs(r[j] / a[j] - t_star);
        if (gap < best_gap) {
          best_gap = gap;
          entering = j;
        }
      }
      if (entering < 0) continue;
      Matrix da_new = da;
      da_new.row(k) = D.row(entering);
      Eigen::PartialPivLU<Matrix> lu_new(da_new);
      if (lu_new.rcond() < 1e-12) continue;
      in_basis[std::size_t(basis[std::size_t(k)])] = 0;
      in_basis[std::size_t(entering)] = 1;
      basis[std::size_t(k)] = entering;
      da = std::move(da_new);
      lu = std::move(lu_new);
      for (Eigen::Index kk = 0; kk < h; ++kk) ua[kk] = u[basis[std::size_t(kk)]];
      x = lu.solve(ua);
      moved = true;
      break;
    }
    if (!moved) break;
  }
  return x;
}

}  // namespace detail

/// Least-absolute-deviation regression: min_x ||u - D x||_1.
inline L1Fit l1_regression(const Matrix& D, const Vector& u, int max_iters = 5000, double tol = 1e-9) {
  if (D.rows() != u.size()) throw Error(ErrorCode::DimMismatch, "l1 regression operands disagree in rows");
  L1Fit fit;
  const Eigen::Index h = D.cols();
  if (h == 0 || D.rows() == 0) {
    fit.x = Vector::Zero(h);
    fit.e = u;
    return fit;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(D);
  fit.rank_deficient = qr.rank() < h;
  fit.x = fit.rank_deficient ? detail::l1_admm(D, u, max_iters, tol, fit.iterations)
                             : detail::l1_vertex_descent(D, u, max_iters, fit.iterations);
  fit.e = u - D * fit.x;
  return fit;
}

struct L1ErrorResult {
  SparseCoefficients x;
  ImageVector e;
  bool rank_deficient = false;
};

/// min ||e||_1 s.t. u = D x + e, with D a small (h-column) dictionary.
inline L1ErrorResult solve_l1_error(const ImageVector& u, const BlockedDictionary& dict_small) {
  if (u.size() != dict_small.m()) throw Error(ErrorCode::DimMismatch, "test vector and dictionary disagree in m");
  L1Fit fit = l1_regression(dict_small.atoms(), u.data);
  return {SparseCoefficients(std::move(fit.x), dict_small.id()), ImageVector(std::move(fit.e), u.height, u.width),
          fit.rank_deficient};
}

}  // namespace soc
