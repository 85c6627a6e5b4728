#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "soc/learning.hpp"
#include "soc/synth.hpp"

using namespace soc;

namespace {

// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(Matrix a) {
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(a(i, i));
  std::sort(out.rbegin(), out.rend());
  return out;
}

BlockedDictionary single_block(const Matrix& a, int h, int w) {
  return BlockedDictionary(a, {{"s", BlockKind::Face, 0, a.cols()}}, h, w);
}

OcclusionSampleSet set_from(const Matrix& cols, int h, int w) {
  OcclusionSampleSet s;
  s.category = "occ";
  for (Eigen::Index j = 0; j < cols.cols(); ++j) s.add(ImageVector(cols.col(j), h, w));
  return s;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST(CollectSsrc, MatchesNormalEquationsResidual) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix a = oracle::gaussian_matrix(10, 3, seed, true);
    const Vector u = oracle::gaussian_vector(10, seed + 100);
    const Matrix g = a.transpose() * a;
    const Vector coef = g.llt().solve(a.transpose() * u);
    const Vector r = u - a * coef;
    const ImageVector out = collect_ssrc(ImageVector(u, 10, 1), single_block(a, 10, 1));
    EXPECT_LT((out.data - r.normalized()).norm(), 1e-10);
    // Orthogonality before normalization.
    EXPECT_LT((a.transpose() * projection_residual(u, a)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(CollectSsrc, InSpanIsRejectedOrthogonalIsIdentity) {
  const Matrix a = Matrix::Identity(4, 2);
  const BlockedDictionary sub = single_block(a, 4, 1);
  EXPECT_EQ(code_of([&] { collect_ssrc(ImageVector(Vector::Unit(4, 1), 4, 1), sub); }), ErrorCode::ZeroPattern);
  const Vector u = (Vector(4) << 0, 0, 0.6, 0.8).finished();
  EXPECT_LT((collect_ssrc(ImageVector(u, 4, 1), sub).data - u).norm(), 1e-15);
}

TEST(CollectSsrc, RankDeficientUsesPseudoInverse) {
  Matrix a(4, 3);
  a << 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0;
  const Vector u = (Vector(4) << 1, 2, 3, 0).finished();
  const ImageVector out = collect_ssrc(ImageVector(u, 4, 1), single_block(a, 4, 1));
  EXPECT_LT((out.data - Vector::Unit(4, 2)).norm(), 1e-12);
}

TEST(CollectEsrc, CentroidDifference) {
  const Matrix a = oracle::gaussian_matrix(8, 4, 3, true);
  const BlockedDictionary sub = single_block(a, 8, 1);
  const Vector centroid = a.rowwise().mean();
  EXPECT_EQ(code_of([&] { collect_esrc(ImageVector(centroid, 8, 1), sub); }), ErrorCode::ZeroPattern);

  const Vector u = oracle::gaussian_vector(8, 4);
  EXPECT_LT((collect_esrc(ImageVector(u, 8, 1), sub).data - (u - centroid).normalized()).norm(), 1e-12);

  const Matrix d = a.leftCols(1);
  EXPECT_LT((collect_esrc(ImageVector(u, 8, 1), single_block(d, 8, 1)).data - (u - d).normalized()).norm(), 1e-12);
}

TEST(SampleSet, DropsNearZeroAndNormalizes) {
  OcclusionSampleSet s;
  EXPECT_FALSE(s.add(ImageVector(Vector::Constant(4, 1e-8), 2, 2)));
  EXPECT_TRUE(s.add(ImageVector((Vector(4) << 3, 0, 4, 0).finished(), 2, 2)));
  EXPECT_EQ(s.dropped, 1);
  EXPECT_EQ(s.p(), 1);
  EXPECT_NEAR(s.samples.col(0).norm(), 1.0, 1e-15);
  EXPECT_THROW(s.add(ImageVector(Vector::Ones(6), 2, 3)), Error);
}

TEST(Ksvd, CopiesOfOneVectorGiveThatAtom) {
  const Vector v = oracle::gaussian_vector(12, 9).normalized();
  const OcclusionSampleSet s = set_from(v.replicate(1, 30), 12, 1);
  KsvdConfig cfg;
  cfg.atom_count = 1;
  const KsvdResult r = ksvd_train(s, cfg);
  EXPECT_NEAR(std::abs(r.dictionary.atoms().col(0).dot(v)), 1.0, 1e-12);
  EXPECT_LT(r.error_trace.back(), 1e-10);
}

TEST(Ksvd, RecoversTwoOrthogonalDirections) {
  const Vector a = Vector::Unit(10, 2), b = (Vector::Unit(10, 5) + Vector::Unit(10, 7)).normalized();
  Matrix cols(10, 40);
  for (int j = 0; j < 40; ++j) cols.col(j) = (j % 2 ? a : b) * (j % 3 == 0 ? -1.0 : 1.0) * (1 + 0.1 * j);
  KsvdConfig cfg;
  cfg.atom_count = 2;
  cfg.sparsity_budget = 1;
  const KsvdResult r = ksvd_train(set_from(cols, 10, 1), cfg);
  const Matrix& B = r.dictionary.atoms();
  const double ca = std::max(std::abs(B.col(0).dot(a)), std::abs(B.col(1).dot(a)));
  const double cb = std::max(std::abs(B.col(0).dot(b)), std::abs(B.col(1).dot(b)));
  EXPECT_NEAR(ca, 1.0, 1e-12);
  EXPECT_NEAR(cb, 1.0, 1e-12);
  EXPECT_LT(r.error_trace.back(), 1e-8);
}

TEST(Ksvd, SixtySamplesThirtyAtomsMonotoneAndReproducible) {
  const Matrix low = oracle::gaussian_matrix(64, 8, 21, true);
  Matrix cols = low * oracle::gaussian_matrix(8, 60, 22, false) + 0.05 * oracle::gaussian_matrix(64, 60, 23, false);
  const OcclusionSampleSet s = set_from(cols, 8, 8);
  KsvdConfig cfg;
  cfg.seed = 7;
  const KsvdResult r = ksvd_train(s, cfg);
  ASSERT_EQ(r.dictionary.n(), 30);
  EXPECT_EQ(r.dictionary.blocks().front().kind, BlockKind::Occlusion);
  EXPECT_EQ(r.dictionary.blocks().front().label, "occ");
  ASSERT_EQ(r.error_trace.size(), 20u);
  for (std::size_t t = 1; t < r.error_trace.size(); ++t) EXPECT_LE(r.error_trace[t], r.error_trace[t - 1]);
  for (Eigen::Index j = 0; j < 30; ++j) EXPECT_NEAR(r.dictionary.atoms().col(j).norm(), 1.0, 1e-9);
  for (Eigen::Index i = 0; i < 60; ++i) EXPECT_LE((r.codes.col(i).array() != 0).count(), cfg.sparsity_budget);
  EXPECT_NEAR((s.samples - r.dictionary.atoms() * r.codes).norm(), r.error_trace.back(), 1e-9);

  const KsvdResult again = ksvd_train(s, cfg);
  EXPECT_EQ(again.dictionary.atoms(), r.dictionary.atoms());
  EXPECT_EQ(again.error_trace, r.error_trace);
}

TEST(Ksvd, ZeroIterationsReturnsSignFixedSamples) {
  const Matrix cols = oracle::gaussian_matrix(6, 4, 31, true);
  KsvdConfig cfg;
  cfg.atom_count = 4;
  cfg.iterations = 0;
  const KsvdResult r = ksvd_train(set_from(cols, 6, 1), cfg);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const Vector atom = r.dictionary.atoms().col(j);
    Eigen::Index peak = 0;
    atom.cwiseAbs().maxCoeff(&peak);
    EXPECT_GT(atom[peak], 0.0);
    double best = 0;
    for (Eigen::Index i = 0; i < 4; ++i) best = std::max(best, std::abs(atom.dot(cols.col(i))));
    EXPECT_NEAR(best, 1.0, 1e-12);
  }
  EXPECT_LT(r.error_trace.front(), 1e-12);
}

TEST(Ksvd, RejectsBadInputs) {
  OcclusionSampleSet empty;
  EXPECT_EQ(code_of([&] { ksvd_train(empty, KsvdConfig{}); }), ErrorCode::EmptySamples);
  const OcclusionSampleSet s = set_from(oracle::gaussian_matrix(6, 4, 1, true), 6, 1);
  KsvdConfig cfg;
  cfg.atom_count = 5;
  EXPECT_EQ(code_of([&] { ksvd_train(s, cfg); }), ErrorCode::BadConfig);
  cfg.atom_count = 2;
  cfg.sparsity_budget = 0;
  EXPECT_EQ(code_of([&] { ksvd_train(s, cfg); }), ErrorCode::BadConfig);
}

TEST(Spectrum, RankOneAndOrthonormal) {
  const Vector v = oracle::gaussian_vector(9, 2);
  const auto s1 = spectrum(set_from(v.replicate(1, 5), 9, 1));
  EXPECT_NEAR(s1[0], 5.0, 1e-10);
  for (std::size_t i = 1; i < s1.size(); ++i) EXPECT_NEAR(s1[i], 0.0, 1e-10);

  const auto s2 = spectrum(set_from(Matrix::Identity(7, 4), 7, 1));
  for (double e : s2) EXPECT_NEAR(e, 1.0, 1e-12);
}

TEST(Spectrum, MatchesJacobiOracle) {
  const Matrix cols = oracle::gaussian_matrix(30, 3, 41, false) * oracle::gaussian_matrix(3, 12, 42, false) +
                      0.01 * oracle::gaussian_matrix(30, 12, 43, false);
  const OcclusionSampleSet s = set_from(cols, 30, 1);
  const auto got = spectrum(s);
  const auto want = jacobi_eigenvalues(s.samples.transpose() * s.samples);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], std::max(0.0, want[i]), 1e-8);
  for (std::size_t i = 1; i < got.size(); ++i) EXPECT_LE(got[i], got[i - 1]);
}

TEST(CollectSoc, LabeledAndLcdPatternsTrackTheOccluder) {
  SynthSpec spec;
  spec.classes = 12;
  spec.noise_sigma = 0.01;
  spec.occlusion_shapes = {{"rect", RegionKind::Rectangle, 0.25, 0.05}};
  const FaceModel model(spec);
  const BlockedDictionary dict = gallery_dictionary(model, spec.height, spec.width);
  const MaskEstimatorConfig cfg;
  for (int c = 0; c < 3; ++c) {
    const ImageVector clean = model.image(c, 8);
    const OccludedImage occ = apply_occlusion(clean, "rect", spec, std::uint64_t(c));
    const ImageVector u = normalized(occ.occluded);
    Vector truth = (occ.occluded.data - clean.data) / occ.occluded.data.norm();
    for (std::size_t p = 0; p < occ.truth.size(); ++p)
      if (occ.truth.support[p]) truth[Eigen::Index(p)] = 0;
    truth.normalize();
    const double labeled = collect_soc(u, dict, class_label(c), cfg).data.dot(truth);
    const double lcd = collect_soc(u, dict, std::nullopt, cfg).data.dot(truth);
    EXPECT_GE(labeled, 0.8);
    EXPECT_LE(std::abs(labeled - lcd), 0.1);
  }
}

TEST(CollectSoc, CleanImageOfKnownClassIsRejected) {
  SynthSpec spec;
  spec.classes = 4;
  const FaceModel model(spec);
  const BlockedDictionary dict = gallery_dictionary(model, spec.height, spec.width);
  const ImageVector u = normalized(model.image(1, 2));  // a gallery atom, so exactly in span
  EXPECT_EQ(code_of([&] { collect_soc(u, dict, class_label(1), MaskEstimatorConfig{}); }), ErrorCode::ZeroPattern);
}

TEST(CollectSoc, MissingLabelIsUnknown) {
  SynthSpec spec;
  spec.classes = 2;
  const FaceModel model(spec);
  const BlockedDictionary dict = gallery_dictionary(model, spec.height, spec.width);
  EXPECT_EQ(code_of([&] { collect_soc(normalized(model.image(0, 9)), dict, "nobody", MaskEstimatorConfig{}); }),
            ErrorCode::UnknownLabel);
}
