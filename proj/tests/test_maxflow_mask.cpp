#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <random>

#include "oracles.hpp"
#include "soc/learning.hpp"
#include "soc/mask.hpp"
#include "soc/maxflow.hpp"
#include "soc/synth.hpp"

using namespace soc;

namespace {

struct ArcSpec {
  int i, j;
  double cap_ij, cap_ji;
};

// Minimum s-t cut by enumerating every side assignment of the inner nodes.
double brute_force_min_cut(int n, const std::vector<std::pair<double, double>>& terminals,
                           const std::vector<ArcSpec>& arcs) {
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < (1 << n); ++s) {
    double cut = 0;
    for (int i = 0; i < n; ++i) {
      const bool source_side = (s >> i) & 1;
      cut += source_side ? terminals[std::size_t(i)].second : terminals[std::size_t(i)].first;
    }
    for (const auto& a : arcs) {
      const bool si = (s >> a.i) & 1, sj = (s >> a.j) & 1;
      if (si && !sj) cut += a.cap_ij;
      if (sj && !si) cut += a.cap_ji;
    }
    best = std::min(best, cut);
  }
  return best;
}

// Maximum of support_energy over all 2^m labelings, computed independently.
double brute_force_energy(const Vector& e, int h, int w, double beta, double tau) {
  const int m = h * w;
  auto ll = [&](double v, int z) {
    const bool small = std::abs(v) <= tau;
    if (z == 1) return small ? -std::log(tau) : std::log(tau);
    return small ? std::log(tau) : 0.0;
  };
  double best = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < (1 << m); ++s) {
    double total = 0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int i = r * w + c;
        const int zi = (s >> i) & 1;
        total += ll(e[i], zi);
        if (c + 1 < w && zi == ((s >> (i + 1)) & 1)) total += beta;
        if (r + 1 < h && zi == ((s >> (i + w)) & 1)) total += beta;
      }
    best = std::max(best, total);
  }
  return best;
}

Vector mixed_errors(int m, double tau, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Vector e(m);
  for (int i = 0; i < m; ++i) e[i] = (u(rng) < 0.5 ? 0.5 : 3.0) * tau * (u(rng) < 0.5 ? -1 : 1);
  return e;
}

// Size of the smallest 4-connected component of occluded pixels.
int smallest_occluded_component(const OcclusionMask& z) {
  std::vector<int> seen(z.size(), 0);
  int smallest = std::numeric_limits<int>::max();
  for (std::size_t s = 0; s < z.size(); ++s) {
    if (z.support[s] != 0 || seen[s]) continue;
    int count = 0;
    std::queue<int> q;
    q.push(int(s));
    seen[s] = 1;
    while (!q.empty()) {
      const int i = q.front();
      q.pop();
      ++count;
      const int r = i / z.width, c = i % z.width;
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& p : nb) {
        if (p[0] < 0 || p[0] >= z.height || p[1] < 0 || p[1] >= z.width) continue;
        const int j = p[0] * z.width + p[1];
        if (z.support[std::size_t(j)] == 0 && !seen[std::size_t(j)]) {
          seen[std::size_t(j)] = 1;
          q.push(j);
        }
      }
    }
    smallest = std::min(smallest, count);
  }
  return smallest;
}

struct Corpus {
  SynthSpec spec;
  FaceModel model;
  BlockedDictionary dict;

  Corpus()
      : spec(make_spec()), model(spec), dict(gallery_dictionary(model, spec.height, spec.width)) {}

  static SynthSpec make_spec() {
    SynthSpec s;
    s.classes = 20;
    s.noise_sigma = 0.01;
    s.occlusion_shapes = {{"rect", RegionKind::Rectangle, 0.25, 0.05}, {"scarf", RegionKind::LowerBand, 0.6, 0.9}};
    return s;
  }
};

const Corpus& corpus() {
  static const Corpus c;
  return c;
}

}  // namespace

TEST(MaxFlow, MatchesBruteForceMinCutOnRandomGraphs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + trial % 9;
    std::vector<std::pair<double, double>> term{std::size_t(n)};
    for (auto& t : term) t = {u(rng) < 0.3 ? 0.0 : 5 * u(rng), u(rng) < 0.3 ? 0.0 : 5 * u(rng)};
    std::vector<ArcSpec> arcs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (u(rng) < 0.5) arcs.push_back({i, j, 3 * u(rng), u(rng) < 0.5 ? 0.0 : 3 * u(rng)});
    MaxFlowGraph<double> g(n);
    for (int i = 0; i < n; ++i) g.add_terminal(i, term[std::size_t(i)].first, term[std::size_t(i)].second);
    for (const auto& a : arcs) g.add_edge(a.i, a.j, a.cap_ij, a.cap_ji);
    const double flow = g.maxflow();
    const double oracle = brute_force_min_cut(n, term, arcs);
    ASSERT_NEAR(flow, oracle, 1e-9 * (1 + oracle)) << "trial " << trial;

    // The returned segmentation is itself a minimum cut.
    double cut = 0;
    for (int i = 0; i < n; ++i) {
      const bool src = g.segment(i) == MaxFlowGraph<double>::Segment::Source;
      cut += src ? term[std::size_t(i)].second : term[std::size_t(i)].first;
    }
    for (const auto& a : arcs) {
      const bool si = g.segment(a.i) == MaxFlowGraph<double>::Segment::Source;
      const bool sj = g.segment(a.j) == MaxFlowGraph<double>::Segment::Source;
      if (si && !sj) cut += a.cap_ij;
      if (sj && !si) cut += a.cap_ji;
    }
    ASSERT_NEAR(cut, oracle, 1e-9 * (1 + oracle)) << "trial " << trial;
  }
}

TEST(MaxFlow, IntegerCapacitiesOnChain) {
  MaxFlowGraph<int> g(3);
  g.add_terminal(0, 7, 0);
  g.add_terminal(2, 0, 5);
  g.add_edge(0, 1, 4, 0);
  g.add_edge(1, 2, 9, 0);
  EXPECT_EQ(g.maxflow(), 4);
  EXPECT_EQ(g.segment(0), MaxFlowGraph<int>::Segment::Source);
  EXPECT_EQ(g.segment(2), MaxFlowGraph<int>::Segment::Sink);
}

TEST(LogLikelihood, ReferenceValues) {
  EXPECT_NEAR(log_likelihood(0.001, 1, 0.005), 5.298317366548036, 1e-12);
  EXPECT_EQ(log_likelihood(0.01, 0, 0.005), 0.0);
  EXPECT_NEAR(log_likelihood(0.001, 0, 0.005), -5.298317366548036, 1e-12);
  EXPECT_NEAR(log_likelihood(0.01, 1, 0.005), -5.298317366548036, 1e-12);
}

TEST(UpdateSupport, ZeroBetaDecouplesPixels) {
  std::mt19937_64 rng(5);
  const double tau = 0.005;
  const Vector e = mixed_errors(30, tau, rng);
  const OcclusionMask z = update_support(ImageVector(e, 5, 6), 0.0, tau);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(z.support[std::size_t(i)], std::abs(e[i]) <= tau ? 1 : 0);
}

TEST(UpdateSupport, AllSmallErrorsGiveAllOnes) {
  const Vector e = Vector::Constant(12, 0.001);
  for (double beta : {0.0, 1.0, 20.0}) {
    const OcclusionMask z = update_support(ImageVector(e, 3, 4), beta, 0.005);
    EXPECT_EQ(z, OcclusionMask::ones(3, 4));
  }
}

TEST(UpdateSupport, TwoByTwoMatchesEnumeration) {
  const Vector e = (Vector(4) << 0.001, 0.02, -0.03, 0.004).finished();
  const OcclusionMask z = update_support(ImageVector(e, 2, 2), 1.0, 0.005);
  EXPECT_NEAR(support_energy(z, e, 1.0, 0.005, Neighborhood::Four), brute_force_energy(e, 2, 2, 1.0, 0.005), 1e-12);
}

TEST(UpdateSupport, GlobalOptimumOnAllSmallGrids) {
  std::mt19937_64 rng(99);
  int trials = 0;
  for (int h = 1; h <= 4; ++h)
    for (int w = 1; w <= 4; ++w)
      for (double beta : {0.0, 1.0, 20.0})
        for (double tau : {0.002, 0.005})
          for (int rep = 0; rep < 3; ++rep) {
            const Vector e = mixed_errors(h * w, tau, rng);
            const OcclusionMask z = update_support(ImageVector(e, h, w), beta, tau);
            ASSERT_NEAR(support_energy(z, e, beta, tau, Neighborhood::Four), brute_force_energy(e, h, w, beta, tau),
                        1e-9)
                << h << "x" << w << " beta " << beta << " tau " << tau;
            ++trials;
          }
  EXPECT_EQ(trials, 288);
}

TEST(UpdateSupport, NegativeBetaRejected) {
  EXPECT_THROW(update_support(ImageVector(Vector::Zero(4), 2, 2), -1.0, 0.005), Error);
}

TEST(BuildLcd, IdentityPicksMatchingColumn) {
  const BlockedDictionary d(Matrix::Identity(3, 3), {{"a", BlockKind::Face, 0, 3}}, 3, 1);
  const ImageVector u(Vector::Unit(3, 1), 3, 1, true);
  const BlockedDictionary lcd = build_lcd(u, d, 1);
  ASSERT_EQ(lcd.n(), 1);
  EXPECT_EQ(lcd.atoms().col(0), d.atoms().col(1));
  EXPECT_EQ(lcd.blocks().front().label, "lcd");
}

TEST(BuildLcd, FullSelectionIsPsiDescending) {
  const BlockedDictionary d(oracle::gaussian_matrix(6, 8, 4, true), {{"a", BlockKind::Face, 0, 8}}, 6, 1);
  const ImageVector u(oracle::gaussian_vector(6, 5).normalized(), 6, 1, true);
  const BlockedDictionary lcd = build_lcd(u, d, 8);
  const Vector psi = lcd.atoms().transpose() * u.data;
  for (int k = 1; k < 8; ++k) EXPECT_GE(psi[k - 1], psi[k]);
}

TEST(BuildLcd, TopFiveMatchesDirectRecomputation) {
  const Matrix a = oracle::gaussian_matrix(20, 50, 6, true);
  const BlockedDictionary d(a, {{"a", BlockKind::Face, 0, 50}}, 20, 1);
  const ImageVector u(oracle::gaussian_vector(20, 7).normalized(), 20, 1, true);
  std::vector<std::pair<double, int>> psi;
  for (int j = 0; j < 50; ++j) psi.push_back({a.col(j).dot(u.data), j});
  std::sort(psi.begin(), psi.end(), [](auto x, auto y) { return x.first > y.first; });
  const BlockedDictionary lcd = build_lcd(u, d, 5);
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(lcd.atoms().col(k).isApprox(a.col(psi[std::size_t(k)].second)));
  EXPECT_EQ(build_lcd(u, d, 5).atoms(), lcd.atoms());
}

TEST(BuildLcd, RejectsBadH) {
  const BlockedDictionary d(Matrix::Identity(3, 3), {{"a", BlockKind::Face, 0, 3}}, 3, 1);
  const ImageVector u(Vector::Unit(3, 0), 3, 1, true);
  for (int h : {0, 4}) {
    try {
      build_lcd(u, d, h);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadH);
    }
  }
}

TEST(MaskConfig, ValidatesSchedule) {
  MaskEstimatorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau_schedule = {0.003, 0.004};
  EXPECT_THROW(c.validate(), Error);
  c.tau_schedule = {};
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.beta = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(EstimateMask, InSpanInputGivesNoOcclusion) {
  const auto& c = corpus();
  const BlockedDictionary sub = c.dict.sub_dictionary(class_label(3));
  const ImageVector u(sub.atoms() * Vector::Constant(sub.n(), 1.0).normalized(), 83, 60);
  const MaskEstimate est = estimate_mask(normalized(u), sub, MaskEstimatorConfig{});
  EXPECT_EQ(est.mask, OcclusionMask::ones(83, 60));
  EXPECT_LT(est.pattern.data.cwiseAbs().maxCoeff(), 1e-9);
  try {
    extract_pattern(est);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroPattern);
  }
}

TEST(EstimateMask, RectangleRecoveredWithLabeledBasis) {
  const auto& c = corpus();
  for (int i = 0; i < 4; ++i) {
    const OccludedImage occ = apply_occlusion(c.model.image(i, 7), "rect", c.spec, std::uint64_t(i));
    const ImageVector u = normalized(occ.occluded);
    const MaskEstimate est = estimate_mask(u, c.dict.sub_dictionary(class_label(i)), MaskEstimatorConfig{}, true);
    EXPECT_GE(occluded_iou(est.mask, occ.truth), 0.9);

    for (std::size_t p = 0; p < est.mask.size(); ++p) {
      if (est.pattern.data[Eigen::Index(p)] != 0.0) { ASSERT_EQ(est.mask.support[p], 0); }
    }

    // The graph cut maximizes the step-t energy, so it never loses to the previous mask.
    ASSERT_EQ(est.energy_trace.size(), est.prior_energy_trace.size());
    for (std::size_t t = 0; t < est.energy_trace.size(); ++t)
      EXPECT_GE(est.energy_trace[t], est.prior_energy_trace[t] - 1e-9);
    EXPECT_EQ(est.mask_trace.size(), std::size_t(est.iterations));

    // Pattern lies on the estimated occluded set and matches the true occluder.
    const ImageVector pattern = extract_pattern(u, c.dict.sub_dictionary(class_label(i)), est);
    EXPECT_NEAR(pattern.data.norm(), 1.0, 1e-12);
    const double scale = occ.occluded.data.norm();
    Vector truth = (occ.occluded.data - c.model.image(i, 7).data) / scale;
    for (std::size_t p = 0; p < occ.truth.size(); ++p)
      if (occ.truth.support[p]) truth[Eigen::Index(p)] = 0;
    EXPECT_GE(pattern.data.dot(truth.normalized()), 0.8);
  }
}

TEST(EstimateMask, RectangleRecoveredWithLcdBasis) {
  const auto& c = corpus();
  const MaskEstimatorConfig cfg;
  for (int i = 0; i < 3; ++i) {
    const OccludedImage occ = apply_occlusion(c.model.image(i + 5, 8), "rect", c.spec, std::uint64_t(40 + i));
    const ImageVector u = normalized(occ.occluded);
    const MaskEstimate est = estimate_mask(u, build_lcd(u, c.dict, cfg.h), cfg);
    EXPECT_GE(occluded_iou(est.mask, occ.truth), 0.85);
  }
}

TEST(EstimateMask, ScarfMaskIsContiguous) {
  const auto& c = corpus();
  const MaskEstimatorConfig cfg;
  for (int i = 0; i < 2; ++i) {
    const OccludedImage occ = apply_occlusion(c.model.image(i, 9), "scarf", c.spec, std::uint64_t(70 + i));
    const ImageVector u = normalized(occ.occluded);
    const MaskEstimate est = estimate_mask(u, build_lcd(u, c.dict, cfg.h), cfg);
    ASSERT_GT(est.mask.count_occluded(), 0u);
    EXPECT_GT(smallest_occluded_component(est.mask), 1);
  }
}

TEST(EstimateMask, PhasesFollowTheSchedule) {
  const auto& c = corpus();
  const OccludedImage occ = apply_occlusion(c.model.image(2, 7), "rect", c.spec, 3);
  MaskEstimatorConfig cfg;
  cfg.max_outer_iters = 9;
  const MaskEstimate est = estimate_mask(normalized(occ.occluded), c.dict.sub_dictionary(class_label(2)), cfg);
  for (std::size_t t = 0; t < est.tau_trace.size(); ++t)
    EXPECT_EQ(est.tau_trace[t], cfg.tau_schedule[std::min(t, cfg.tau_schedule.size() - 1)]);
  EXPECT_LE(est.iterations, 9);
}

TEST(EstimateMask, DegenerateFloorRaises) {
  // Error far above tau everywhere pushes every pixel to the occluded label.
  const BlockedDictionary basis(Matrix::Identity(32, 1), {{"a", BlockKind::Face, 0, 1}}, 4, 8);
  Vector u = Vector::LinSpaced(32, 0.1, 0.9);
  u[0] = 0;
  MaskEstimatorConfig cfg;
  cfg.beta = 0;
  try {
    estimate_mask(ImageVector(u.normalized(), 4, 8, true), basis, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Degenerate);
  }
}

TEST(ExtractPattern, AllOccludedGivesNormalizedResidual) {
  MaskEstimate est;
  est.mask = OcclusionMask(std::vector<std::uint8_t>(4, 0), 2, 2);
  est.pattern = ImageVector((Vector(4) << 3, 0, 0, 4).finished(), 2, 2);
  const ImageVector p = extract_pattern(est);
  EXPECT_NEAR(p.data[0], 0.6, 1e-15);
  EXPECT_NEAR(p.data[3], 0.8, 1e-15);
}
