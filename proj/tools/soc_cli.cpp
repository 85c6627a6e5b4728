// soc: command-line front end for corpus synthesis, occlusion-sample
// collection, occlusion dictionary training, classification, rejection ROC
// curves and dictionary-size sweeps.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "soc/classifier.hpp"
#include "soc/config.hpp"
#include "soc/corpus.hpp"
#include "soc/io.hpp"
#include "soc/learning.hpp"
#include "soc/mask.hpp"
#include "soc/roc.hpp"

namespace fs = std::filesystem;
using namespace soc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::optional<long long> seed;
  std::string out;
  bool debug = false;
  bool timings = false;
  std::vector<std::string> sets;
  std::string corpus;
  std::vector<std::string> samples;
  std::vector<std::string> dicts;
  std::string category;
  std::string strategy;
};

// Configuration failures are usage errors even when raised as I/O.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Accepts a store base with or without its .json / .bin suffix.
fs::path store_base(const std::string& p) {
  fs::path path(p);
  if (path.extension() == ".json" || path.extension() == ".bin") path.replace_extension();
  return path;
}

class Csv {
 public:
  Csv(const fs::path& path, const std::string& header) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out_ << header << '\n';
  }
  template <typename... T>
  void row(const T&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cells, first = false), ...);
    out_ << '\n';
    if (!out_) throw Error(ErrorCode::Io, "write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

/// Shared state of one command invocation.
class Context {
 public:
  Context(const Options& o, std::string command) : opt(o), command_(std::move(command)) {
    if (!o.config.empty()) {
      if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
      cfg = KeyValueConfig::load(o.config);
    }
    for (const auto& kv : o.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    // Flags override the file.
    if (o.seed) cfg.set("seed", std::to_string(*o.seed));
    if (!o.corpus.empty()) cfg.set("corpus", o.corpus);
    if (!o.category.empty()) cfg.set("category", o.category);
    if (!o.strategy.empty()) cfg.set("strategy", o.strategy);
    if (!o.samples.empty()) cfg.set("samples", join(o.samples));
    if (!o.dicts.empty()) cfg.set("dicts", join(o.dicts));
    out = o.out;
    fs::create_directories(out);
    const long long t = cfg.get_int("threads", std::max(1u, std::thread::hardware_concurrency()));
    if (t < 1) throw Error(ErrorCode::BadConfig, "threads must be >= 1");
    threads = unsigned(t);
  }

  fs::path corpus_dir() const {
    const std::string c = cfg.get_string("corpus", "");
    if (c.empty()) throw UsageError(command_ + " needs --corpus");
    if (!fs::exists(fs::path(c) / kManifestName)) throw Error(ErrorCode::Io, "no manifest in corpus " + c);
    return c;
  }

  std::vector<fs::path> stores(const std::string& key, bool required) const {
    std::vector<fs::path> out_paths;
    for (const auto& s : split_list(cfg.get_string(key, ""))) {
      const fs::path base = store_base(s);
      if (!fs::exists(io::meta_path(base)) || !fs::exists(io::matrix_path(base)))
        throw Error(ErrorCode::Io, "missing store " + base.string() + " (.json/.bin)");
      out_paths.push_back(base);
    }
    if (required && out_paths.empty()) throw UsageError(command_ + " needs --" + key);
    return out_paths;
  }

  int feature_height() const { return int(cfg.get_int("feature_height", 12)); }
  int feature_width() const { return int(cfg.get_int("feature_width", 10)); }

  void time(const std::string& stage, double seconds, std::size_t items) {
    timings_.push_back({stage, seconds, items});
    if (opt.debug) std::cerr << "[" << command_ << "] " << stage << ": " << items << " items, " << seconds << " s\n";
  }

  void finish() {
    if (opt.timings) {
      Csv s(out / "stats.csv", "stage,seconds,items");
      for (const auto& t : timings_) s.row(t.stage, num(t.seconds), t.items);
    }
    if (opt.debug)
      for (const auto& k : cfg.unused_keys()) std::cerr << "[" << command_ << "] unused config key: " << k << '\n';
  }

  const Options& opt;
  KeyValueConfig cfg;
  fs::path out;
  unsigned threads = 1;

 private:
  struct Timing {
    std::string stage;
    double seconds;
    std::size_t items;
  };
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  }
  std::string command_;
  std::vector<Timing> timings_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string stem_of(const std::string& rel) {
  std::string s = fs::path(rel).replace_extension().string();
  for (char& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s;
}

double iou_occluded(const OcclusionMask& a, const OcclusionMask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.support[i] == 0, y = b.support[i] == 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// ---------------------------------------------------------------- synth

int run_synth(Context& ctx) {
  Stopwatch sw;
  const SynthSpec spec = synth_spec(ctx.cfg);
  CorpusPlan plan;
  plan.collect_per_class = int(ctx.cfg.get_int("collect_per_class", plan.collect_per_class));
  plan.unknown_classes = int(ctx.cfg.get_int("unknown_classes", plan.unknown_classes));
  plan.clean_tests = ctx.cfg.get_bool("clean_tests", plan.clean_tests);
  const auto entries = write_corpus(spec, plan, ctx.out);

  std::map<std::string, int> counts;
  for (const auto& e : entries) ++counts[e.split + "," + e.occlusion_label];
  Csv c(ctx.out / "summary.csv", "split,occlusion_label,images");
  for (const auto& [k, v] : counts) c.row(k, v);
  ctx.time("synth", sw.seconds(), entries.size());
  return kExitOk;
}

// ---------------------------------------------------------------- collect

struct CollectRow {
  std::string status = "kept";
  std::optional<ImageVector> sample;
  std::optional<double> iou;
  int iterations = 0;
};

int run_collect(Context& ctx) {
  Stopwatch sw;
  const fs::path corpus = ctx.corpus_dir();
  const auto entries = read_manifest(corpus);
  const Strategy strategy = parse_strategy(ctx.cfg.get_string("strategy", "soc"));
  const bool labeled = ctx.cfg.get_bool("labeled", true);
  const MaskEstimatorConfig mcfg = mask_config(ctx.cfg);
  const std::string only = ctx.cfg.get_string("category", "");

  std::vector<ManifestEntry> work;
  std::vector<std::string> categories;
  for (const auto& e : entries) {
    if (e.split != kSplitCollect || (!only.empty() && e.occlusion_label != only)) continue;
    work.push_back(e);
    if (std::find(categories.begin(), categories.end(), e.occlusion_label) == categories.end())
      categories.push_back(e.occlusion_label);
  }
  if (work.empty()) throw Error(ErrorCode::EmptySamples, "no collect images" + (only.empty() ? "" : " for " + only));

  const ImageVector first = read_image(corpus, work.front());
  const BlockedDictionary gallery = corpus_gallery(corpus, entries, first.height, first.width);
  ctx.time("gallery", sw.seconds(), std::size_t(gallery.n()));
  const fs::path debug_dir = ctx.out / "debug";

  Stopwatch cw;
  std::vector<CollectRow> rows(work.size());
  parallel_for(work.size(), ctx.threads, [&](std::size_t i) {
    const ManifestEntry& e = work[i];
    CollectRow& row = rows[i];
    const ImageVector u = normalized(read_image(corpus, e));
    try {
      if (strategy == Strategy::Soc) {
        MaskEstimate est;
        const std::optional<std::string> label = labeled ? std::optional(e.face_label) : std::nullopt;
        row.sample = collect_soc(u, gallery, label, mcfg, &est);
        row.iterations = est.iterations;
        if (e.mask != "-") row.iou = iou_occluded(est.mask, io::read_mask(corpus / e.mask));
        if (ctx.opt.debug) {
          const fs::path d = debug_dir / stem_of(e.path);
          fs::create_directories(d);
          for (std::size_t t = 0; t < est.mask_trace.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "iter%02zu", t);
            io::write_pgm(d / (std::string(name) + "_mask.pgm"), io::mask_image(est.mask_trace[t]));
            io::write_pgm(d / (std::string(name) + "_error.pgm"), io::magnitude_image(est.error_trace[t]));
          }
        }
      } else {
        const BlockedDictionary basis = labeled ? gallery.sub_dictionary(e.face_label)
                                        : strategy == Strategy::Ssrc ? build_lcd(u, gallery, mcfg.h)
                                                                     : gallery;
        row.sample = strategy == Strategy::Ssrc ? collect_ssrc(u, basis) : collect_esrc(u, basis);
      }
    } catch (const Error& err) {
      // Per-image failures are logged and skipped; anything else aborts the run.
      if (err.code() != ErrorCode::ZeroPattern && err.code() != ErrorCode::Degenerate) throw;
      row.status = to_string(err.code());
    }
  });
  ctx.time("collect", cw.seconds(), work.size());

  Csv log(ctx.out / "collect.csv", "index,path,face_label,category,status,mask_iou,iterations");
  std::map<std::string, OcclusionSampleSet> sets;
  for (const auto& c : categories) {
    OcclusionSampleSet& s = sets[c];
    s.category = c;
    s.strategy = strategy;
    s.labeled = labeled;
  }
  for (std::size_t i = 0; i < work.size(); ++i) {
    CollectRow& row = rows[i];
    if (row.sample && !sets[work[i].occlusion_label].add(*row.sample)) row.status = "dropped";
    log.row(i, work[i].path, work[i].face_label, work[i].occlusion_label, row.status, opt_num(row.iou),
            row.iterations);
  }
  for (auto& [c, s] : sets) {
    if (s.p() == 0) throw Error(ErrorCode::EmptySamples, "every sample of " + c + " was rejected");
    io::save_samples(ctx.out / ("samples_" + c), s);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

KsvdResult train_one(const Context& ctx, const OcclusionSampleSet& raw, std::optional<int> atoms) {
  const int h = ctx.feature_height(), w = ctx.feature_width();
  const OcclusionSampleSet set = (raw.height == h && raw.width == w) ? raw : raw.downsampled(h, w);
  KsvdConfig k = ksvd_config(ctx.cfg);
  if (atoms) k.atom_count = *atoms;
  if (k.atom_count > set.p())
    throw Error(ErrorCode::BadConfig, std::to_string(k.atom_count) + " atoms requested but " + raw.category +
                                          " has only " + std::to_string(set.p()) + " samples");
  return ksvd_train(set, k);
}

int run_train(Context& ctx) {
  const auto stores = ctx.stores("samples", true);
  for (const auto& base : stores) {
    Stopwatch sw;
    const OcclusionSampleSet set = io::load_samples(base);
    const KsvdResult r = train_one(ctx, set, std::nullopt);
    for (double e : r.error_trace)
      if (!std::isfinite(e)) throw Error(ErrorCode::Degenerate, "K-SVD diverged on " + set.category);
    io::save_dictionary(ctx.out / ("dict_" + set.category), r.dictionary,
                        {{"category", set.category}, {"strategy", to_string(set.strategy)}, {"samples", set.p()}});
    Csv t(ctx.out / ("trace_" + set.category + ".csv"), "iteration,error");
    for (std::size_t i = 0; i < r.error_trace.size(); ++i) t.row(i, num(r.error_trace[i]));
    ctx.time("train_" + set.category, sw.seconds(), std::size_t(set.p()));
  }
  return kExitOk;
}

// ---------------------------------------------------------------- classify / roc / sweep

struct TestImage {
  ManifestEntry entry;
  ImageVector u;  // feature resolution, normalized
};

std::vector<TestImage> load_tests(const Context& ctx, const fs::path& corpus, const std::vector<ManifestEntry>& entries) {
  const auto keep = split_list(ctx.cfg.get_string("test_categories", ""));
  const int h = ctx.feature_height(), w = ctx.feature_width();
  std::vector<TestImage> out;
  for (const auto& e : entries) {
    if (e.split != kSplitTest) continue;
    if (!keep.empty() && std::find(keep.begin(), keep.end(), e.occlusion_label) == keep.end()) continue;
    ImageVector img = read_image(corpus, e);
    if (img.height != h || img.width != w) img = downsample(img, h, w);
    out.push_back({e, normalized(img)});
  }
  return out;
}

std::vector<ClassificationOutcome> classify_all(const Context& ctx, const std::vector<TestImage>& tests,
                                                const BlockedDictionary& R, const ClassifierConfig& cc, bool baseline) {
  std::vector<ClassificationOutcome> out(tests.size());
  parallel_for(tests.size(), ctx.threads, [&](std::size_t i) {
    out[i] = baseline ? classify_src_baseline(tests[i].u, R, cc) : classify(tests[i].u, R, cc);
    for (const auto& r : out[i].face_residuals)
      if (!std::isfinite(r.second)) throw Error(ErrorCode::Degenerate, "non-finite residual on " + tests[i].entry.path);
  });
  return out;
}

std::vector<BlockedDictionary> load_dicts(const std::vector<fs::path>& stores, int h, int w) {
  std::vector<BlockedDictionary> out;
  for (const auto& base : stores) {
    out.push_back(io::load_dictionary(base));
    if (out.back().height() != h || out.back().width() != w)
      throw Error(ErrorCode::DimMismatch, base.string() + " is not at the feature resolution");
  }
  return out;
}

struct Accuracy {
  std::size_t count = 0, face_correct = 0, occ_count = 0, occ_correct = 0;
  double face() const { return count ? double(face_correct) / double(count) : std::nan(""); }
  double occ() const { return occ_count ? double(occ_correct) / double(occ_count) : std::nan(""); }
};

// Accuracy of the argmin labels on test images whose face is in the gallery.
std::map<std::string, Accuracy> accuracy(const std::vector<TestImage>& tests,
                                         const std::vector<ClassificationOutcome>& res, const BlockedDictionary& R) {
  std::set<std::string> faces, occs;
  for (const auto& b : R.blocks()) (b.kind == BlockKind::Face ? faces : occs).insert(b.label);
  std::map<std::string, Accuracy> acc;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const ManifestEntry& e = tests[i].entry;
    if (!faces.count(e.face_label)) continue;
    for (const std::string& key : {e.occlusion_label, std::string("all")}) {
      Accuracy& a = acc[key];
      ++a.count;
      a.face_correct += res[i].best_face == e.face_label;
      if (occs.size() >= 2 && occs.count(e.occlusion_label)) {
        ++a.occ_count;
        a.occ_correct += res[i].best_occlusion == e.occlusion_label;
      }
    }
  }
  return acc;
}

struct Model {
  fs::path corpus;
  std::vector<ManifestEntry> entries;
  BlockedDictionary R;
  ClassifierConfig cc;
  bool baseline = false;
};

Model build_model(const Context& ctx) {
  Model m;
  m.corpus = ctx.corpus_dir();
  const auto stores = ctx.stores("dicts", false);
  m.entries = read_manifest(m.corpus);
  m.cc = classifier_config(ctx.cfg);
  m.baseline = m.cc.baseline_identity_occlusion;
  const int h = ctx.feature_height(), w = ctx.feature_width();
  const BlockedDictionary gallery = corpus_gallery(m.corpus, m.entries, h, w);
  m.R = m.baseline ? gallery : build_compound({gallery}, load_dicts(stores, h, w));
  return m;
}

int run_classify(Context& ctx) {
  Stopwatch sw;
  const Model m = build_model(ctx);
  const auto tests = load_tests(ctx, m.corpus, m.entries);
  ctx.time("load", sw.seconds(), tests.size());
  Stopwatch cw;
  const auto res = classify_all(ctx, tests, m.R, m.cc, m.baseline);
  ctx.time("classify", cw.seconds(), tests.size());

  const bool verbose = ctx.cfg.get_bool("verbose", false);
  std::string header =
      "index,path,face_label,occlusion_label,predicted_face,predicted_occlusion,best_face,best_occlusion,rdi_face,"
      "rdi_occlusion";
  if (verbose && !tests.empty()) {
    for (const auto& r : res.front().face_residuals) header += ",r_" + r.first;
    for (const auto& r : res.front().occlusion_residuals) header += ",r_" + r.first;
  }
  Csv out(ctx.out / "results.csv", header);
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& e = tests[i].entry;
    const auto& r = res[i];
    std::string extra;
    if (verbose) {
      for (const auto& x : r.face_residuals) extra += "," + num(x.second);
      for (const auto& x : r.occlusion_residuals) extra += "," + num(x.second);
    }
    out.row(i, e.path, e.face_label, e.occlusion_label, r.face_label, r.occlusion_label, r.best_face,
            r.best_occlusion, opt_num(r.rdi_face), opt_num(r.rdi_occlusion) + extra);
  }
  Csv acc(ctx.out / "accuracy.csv", "category,count,face_accuracy,occlusion_count,occlusion_accuracy");
  for (const auto& [k, a] : accuracy(tests, res, m.R)) acc.row(k, a.count, num(a.face()), a.occ_count, num(a.occ()));
  return kExitOk;
}

int run_roc(Context& ctx) {
  Stopwatch sw;
  const Model m = build_model(ctx);
  const auto tests = load_tests(ctx, m.corpus, m.entries);
  const auto res = classify_all(ctx, tests, m.R, m.cc, m.baseline);
  ctx.time("classify", sw.seconds(), tests.size());
  const double step = ctx.cfg.get_double("roc_step", 0.01);

  std::set<std::string> faces, occs;
  for (const auto& b : m.R.blocks()) (b.kind == BlockKind::Face ? faces : occs).insert(b.label);
  std::vector<double> fv, fi, ov, oi;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& e = tests[i].entry;
    const auto& r = res[i];
    if (r.rdi_face) (faces.count(e.face_label) ? fv : fi).push_back(*r.rdi_face);
    // Clean images carry no occlusion to accept or reject.
    if (r.rdi_occlusion && e.occlusion_label != kNone) (occs.count(e.occlusion_label) ? ov : oi).push_back(*r.rdi_occlusion);
  }
  const auto face_curve = roc_sweep(fv, fi, step), occ_curve = roc_sweep(ov, oi, step);
  Csv out(ctx.out / "roc.csv", "theta,face_tpr,face_fpr,occlusion_tpr,occlusion_fpr");
  for (std::size_t k = 0; k < face_curve.size(); ++k)
    out.row(num(face_curve[k].theta), num(face_curve[k].tpr), num(face_curve[k].fpr), num(occ_curve[k].tpr),
            num(occ_curve[k].fpr));
  Csv auc(ctx.out / "auc.csv", "curve,valid,invalid,auc");
  auto auc_or_nan = [](const std::vector<double>& v, const std::vector<double>& i) {
    return v.empty() || i.empty() ? std::nan("") : rejection_auc(v, i);
  };
  auc.row("face", fv.size(), fi.size(), num(auc_or_nan(fv, fi)));
  auc.row("occlusion", ov.size(), oi.size(), num(auc_or_nan(ov, oi)));
  return kExitOk;
}

int run_sweep(Context& ctx) {
  Stopwatch sw;
  const fs::path corpus = ctx.corpus_dir();
  const auto stores = ctx.stores("samples", true);
  const auto entries = read_manifest(corpus);
  const ClassifierConfig cc = classifier_config(ctx.cfg);
  const int h = ctx.feature_height(), w = ctx.feature_width();
  const BlockedDictionary gallery = corpus_gallery(corpus, entries, h, w);
  const auto tests = load_tests(ctx, corpus, entries);
  std::vector<OcclusionSampleSet> sets;
  for (const auto& base : stores) sets.push_back(io::load_samples(base));
  std::vector<long long> sizes;
  for (double s : ctx.cfg.get_doubles("sweep_sizes", {2, 3, 5, 7, 10, 20, 30, 40, 50, 60})) {
    if (s < 0 || s != std::floor(s)) throw Error(ErrorCode::BadConfig, "sweep sizes must be non-negative integers");
    sizes.push_back((long long)s);
  }
  ctx.time("load", sw.seconds(), tests.size());

  Csv out(ctx.out / "sweep.csv", "atoms,count,face_accuracy,occlusion_count,occlusion_accuracy");
  for (long long size : sizes) {
    Stopwatch st;
    BlockedDictionary R = build_compound({gallery}, {});
    ClassifierConfig c = cc;
    if (size == 0) {
      // Faces alone under l1 coding: SRC without an occlusion dictionary.
      c.sparsity_mode = SparsityMode::L1;
    } else {
      std::vector<BlockedDictionary> occ;
      for (const auto& s : sets) occ.push_back(train_one(ctx, s, int(size)).dictionary);
      R = build_compound({gallery}, occ);
    }
    const auto res = classify_all(ctx, tests, R, c, false);
    const auto acc = accuracy(tests, res, R);
    const Accuracy a = acc.count("all") ? acc.at("all") : Accuracy{};
    out.row(size, a.count, num(a.face()), a.occ_count, num(a.occ()));
    ctx.time("size_" + std::to_string(size), st.seconds(), tests.size());
  }
  return kExitOk;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadConfig:
    case ErrorCode::BadH: return kExitUsage;
    case ErrorCode::Degenerate: return kExitNumerical;
    default: return kExitData;
  }
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key=value configuration file");
  sub->add_option("--seed", o.seed, "master seed (overrides the config)");
  sub->add_option("--out", o.out, "output directory")->required();
  sub->add_flag("--debug", o.debug, "verbose logging and intermediate dumps");
  sub->add_flag("--timings", o.timings, "write per-stage wall times to stats.csv");
  sub->add_option("--set", o.sets, "override a config key (KEY=VALUE, repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured occlusion coding: synthesis, training, classification and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus (PGM images + manifest.tsv)");
  auto* collect = app.add_subcommand("collect", "collect occlusion samples from the corpus collect split");
  auto* train = app.add_subcommand("train", "compress sample sets into occlusion dictionaries");
  auto* classify_cmd = app.add_subcommand("classify", "classify the corpus test split");
  auto* roc = app.add_subcommand("roc", "rejection ROC curves for faces and occlusions");
  auto* sweep = app.add_subcommand("sweep", "accuracy against occlusion dictionary size");
  for (auto* s : {synth, collect, train, classify_cmd, roc, sweep}) add_common(s, o);
  for (auto* s : {collect, classify_cmd, roc, sweep}) s->add_option("--corpus", o.corpus, "corpus directory");
  collect->add_option("--category", o.category, "collect only this occlusion category");
  collect->add_option("--strategy", o.strategy, "soc, ssrc or esrc");
  for (auto* s : {train, sweep}) s->add_option("--samples", o.samples, "sample store(s)");
  for (auto* s : {classify_cmd, roc}) s->add_option("--dict", o.dicts, "occlusion dictionary store(s)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    Context ctx(o, name);
    int rc = kExitOk;
    if (name == "synth") rc = run_synth(ctx);
    else if (name == "collect") rc = run_collect(ctx);
    else if (name == "train") rc = run_train(ctx);
    else if (name == "classify") rc = run_classify(ctx);
    else if (name == "roc") rc = run_roc(ctx);
    else rc = run_sweep(ctx);
    ctx.finish();
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "soc " << name << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "soc " << name << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "soc " << name << ": " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "soc " << name << ": " << e.what() << '\n';
    return kExitNumerical;
  }
}
