#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "soc/config.hpp"
#include "soc/corpus.hpp"
#include "soc/io.hpp"

using namespace soc;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("soc_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

KeyValueConfig parse(const std::string& text) {
  std::istringstream in(text);
  return KeyValueConfig::parse(in);
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::ZeroNorm;
}

}  // namespace

TEST(Pgm, RoundTripAtByteResolution) {
  TempDir dir;
  std::vector<double> vals;
  for (int i = 0; i < 12; ++i) vals.push_back(i * 20 / 255.0);
  const ImageGrid g(3, 4, vals);
  io::write_pgm(dir.path() / "a.pgm", g);
  const ImageGrid back = io::read_pgm(dir.path() / "a.pgm");
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.width, 4);
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_NEAR(back.values[i], vals[i], 1e-15);
}

TEST(Pgm, HeaderCommentsAndErrors) {
  TempDir dir;
  {
    std::ofstream out(dir.path() / "c.pgm", std::ios::binary);
    out << "P5\n# made by hand\n2 1\n255\n";
    out.put(char(0));
    out.put(char(255));
  }
  const ImageGrid g = io::read_pgm(dir.path() / "c.pgm");
  EXPECT_EQ(g.values, (std::vector<double>{0.0, 1.0}));

  {
    std::ofstream out(dir.path() / "t.pgm", std::ios::binary);
    out << "P5\n4 4\n255\nab";
  }
  EXPECT_EQ(code_of([&] { io::read_pgm(dir.path() / "t.pgm"); }), ErrorCode::Io);
  {
    std::ofstream out(dir.path() / "p2.pgm");
    out << "P2\n1 1\n255\n0\n";
  }
  EXPECT_EQ(code_of([&] { io::read_pgm(dir.path() / "p2.pgm"); }), ErrorCode::Io);
  EXPECT_EQ(code_of([&] { io::read_pgm(dir.path() / "missing.pgm"); }), ErrorCode::Io);
}

TEST(Pgm, MaskRoundTrip) {
  TempDir dir;
  const OcclusionMask z({1, 0, 0, 1, 1, 0}, 2, 3);
  io::write_pgm(dir.path() / "m.pgm", io::mask_image(z));
  EXPECT_EQ(io::read_mask(dir.path() / "m.pgm"), z);
}

TEST(Dictionary, BitExactRoundTrip) {
  TempDir dir;
  const Matrix a = oracle::gaussian_matrix(6, 5, 3, true);
  const BlockedDictionary d(a, {{"x", BlockKind::Face, 0, 3}, {"y", BlockKind::Occlusion, 3, 5}}, 3, 2);
  io::save_dictionary(dir.path() / "d", d, {{"note", "hello"}});
  nlohmann::json meta;
  const BlockedDictionary back = io::load_dictionary(dir.path() / "d", &meta);
  EXPECT_EQ(back.atoms(), d.atoms());
  EXPECT_EQ(back.blocks(), d.blocks());
  EXPECT_EQ(back.height(), 3);
  EXPECT_EQ(back.width(), 2);
  EXPECT_EQ(meta.at("note"), "hello");
}

TEST(Dictionary, CorruptFilesAreIoErrors) {
  TempDir dir;
  const BlockedDictionary d(Matrix::Identity(4, 2), {{"x", BlockKind::Face, 0, 2}}, 2, 2);
  io::save_dictionary(dir.path() / "d", d);
  fs::resize_file(io::matrix_path(dir.path() / "d"), 40);
  EXPECT_EQ(code_of([&] { io::load_dictionary(dir.path() / "d"); }), ErrorCode::Io);

  io::save_dictionary(dir.path() / "e", d);
  {
    std::ofstream out(io::meta_path(dir.path() / "e"));
    out << "{not json";
  }
  EXPECT_EQ(code_of([&] { io::load_dictionary(dir.path() / "e"); }), ErrorCode::Io);
}

TEST(Samples, RoundTripKeepsMetadata) {
  TempDir dir;
  OcclusionSampleSet s;
  s.category = "scarf";
  s.strategy = Strategy::Esrc;
  s.labeled = false;
  s.add(ImageVector(oracle::gaussian_vector(6, 1), 2, 3));
  s.add(ImageVector(oracle::gaussian_vector(6, 2), 2, 3));
  s.add(ImageVector(Vector::Zero(6), 2, 3));
  io::save_samples(dir.path() / "s", s);
  const OcclusionSampleSet back = io::load_samples(dir.path() / "s");
  EXPECT_EQ(back.samples, s.samples);
  EXPECT_EQ(back.category, "scarf");
  EXPECT_EQ(back.strategy, Strategy::Esrc);
  EXPECT_FALSE(back.labeled);
  EXPECT_EQ(back.dropped, 1);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.width, 3);
}

TEST(KeyValue, ParsesCommentsAndWhitespace) {
  const KeyValueConfig c = parse("# header\n epsilon = 0.01  # tight\n\nmode=l1\nname = a b\n");
  EXPECT_DOUBLE_EQ(c.get_double("epsilon", 0), 0.01);
  EXPECT_EQ(c.get_string("mode", ""), "l1");
  EXPECT_EQ(c.get_string("name", ""), "a b");
  EXPECT_EQ(c.get_int("missing", 42), 42);
}

TEST(KeyValue, RejectsMalformedInput) {
  EXPECT_EQ(code_of([] { parse("novalue\n"); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse("=3\n"); }), ErrorCode::BadConfig);
  const KeyValueConfig c = parse("a=1.5x\nb=2.5\nc=maybe\n");
  EXPECT_EQ(code_of([&] { c.get_double("a", 0); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([&] { c.get_int("b", 0); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([&] { c.get_bool("c", false); }), ErrorCode::BadConfig);
}

TEST(KeyValue, ListsAndUnusedKeys) {
  const KeyValueConfig c = parse("tau_schedule = 0.005, 0.004,0.003\ntypo_key = 1\n");
  EXPECT_EQ(c.get_doubles("tau_schedule", {}), (std::vector<double>{0.005, 0.004, 0.003}));
  EXPECT_EQ(c.unused_keys(), std::vector<std::string>{"typo_key"});
}

TEST(KeyValue, MapsOntoLibraryConfigs) {
  const KeyValueConfig c = parse(
      "epsilon=0.02\nq_norm=1\nh=15\nbeta=5\nneighborhood=8\natoms=12\nksvd_iterations=3\nmode=l1\n"
      "theta_face=0.7\nclasses=4\nshapes=hat:upper-band:0.3:0.1;mask:rectangle:0.2:0.8\ntexture_contrast=0.5\n");
  const SolverConfig s = solver_config(c);
  EXPECT_EQ(s.epsilon, 0.02);
  EXPECT_EQ(s.q_norm, 1.0);
  const MaskEstimatorConfig m = mask_config(c);
  EXPECT_EQ(m.h, 15);
  EXPECT_EQ(m.beta, 5.0);
  EXPECT_EQ(m.neighborhood, Neighborhood::Eight);
  const KsvdConfig k = ksvd_config(c);
  EXPECT_EQ(k.atom_count, 12);
  EXPECT_EQ(k.iterations, 3);
  const ClassifierConfig cl = classifier_config(c);
  EXPECT_EQ(cl.sparsity_mode, SparsityMode::L1);
  EXPECT_EQ(cl.theta_face, 0.7);
  const SynthSpec sp = synth_spec(c);
  EXPECT_EQ(sp.classes, 4);
  EXPECT_EQ(sp.texture_contrast, 0.5);
  ASSERT_EQ(sp.occlusion_shapes.size(), 2u);
  EXPECT_EQ(sp.occlusion_shapes[0].name, "hat");
  EXPECT_EQ(sp.occlusion_shapes[0].region, RegionKind::UpperBand);
  EXPECT_EQ(sp.occlusion_shapes[1].region, RegionKind::Rectangle);
  EXPECT_EQ(sp.occlusion_shapes[1].level, 0.8);
}

TEST(KeyValue, InvalidValuesFailValidation) {
  EXPECT_EQ(code_of([] { solver_config(parse("q_norm=3\n")); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { mask_config(parse("neighborhood=6\n")); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { classifier_config(parse("mode=dense\n")); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { synth_spec(parse("shapes=hat:upper-band:0.3\n")); }), ErrorCode::BadConfig);
}

TEST(Corpus, ManifestCountsAndSplits) {
  TempDir dir;
  SynthSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 4;
  spec.test_per_class = 2;
  spec.height = 20;
  spec.width = 16;
  CorpusPlan plan;
  plan.collect_per_class = 2;
  plan.unknown_classes = 1;
  const auto written = write_corpus(spec, plan, dir.path());
  const auto read = read_manifest(dir.path());
  ASSERT_EQ(read.size(), written.size());
  int train = 0, collect = 0, test = 0;
  for (std::size_t i = 0; i < read.size(); ++i) {
    EXPECT_EQ(read[i].path, written[i].path);
    EXPECT_EQ(read[i].occlusion_label, written[i].occlusion_label);
    EXPECT_TRUE(fs::exists(dir.path() / read[i].path));
    if (read[i].mask != "-") { EXPECT_TRUE(fs::exists(dir.path() / read[i].mask)); }
    train += read[i].split == kSplitTrain;
    collect += read[i].split == kSplitCollect;
    test += read[i].split == kSplitTest;
  }
  EXPECT_EQ(train, 3 * 4);
  EXPECT_EQ(collect, 2 * 3 * 2);
  // Unknown classes appear only among the tests: clean plus two occluded per image.
  EXPECT_EQ(test, 4 * 2 * 3);
}

TEST(Corpus, GalleryMatchesModelImages) {
  TempDir dir;
  SynthSpec spec;
  spec.classes = 2;
  spec.samples_per_class = 3;
  spec.test_per_class = 1;
  spec.height = 12;
  spec.width = 10;
  const auto entries = write_corpus(spec, CorpusPlan{}, dir.path());
  const BlockedDictionary D = corpus_gallery(dir.path(), entries, 12, 10);
  ASSERT_EQ(D.blocks().size(), 2u);
  EXPECT_EQ(D.blocks()[1].label, class_label(1));
  EXPECT_EQ(D.blocks()[1].end - D.blocks()[1].begin, 3);
  // Atoms are unit norm; PGM quantization leaves a small difference.
  const FaceModel model(spec);
  const Vector direct = model.image(1, 2).data.normalized();
  EXPECT_LE((D.atoms().col(5) - direct).norm(), 0.01);
  EXPECT_THROW(read_manifest(dir.path() / "missing"), Error);
}
