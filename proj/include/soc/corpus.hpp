#pragma once

// On-disk corpora: a directory of PGM images plus a tab-separated manifest
// naming each image's face label, occlusion label, truth mask and split.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "soc/io.hpp"
#include "soc/synth.hpp"

namespace soc {

namespace fs = std::filesystem;

inline const std::string kManifestName = "manifest.tsv";
inline const std::string kSplitTrain = "train";
inline const std::string kSplitCollect = "collect";
inline const std::string kSplitTest = "test";

struct ManifestEntry {
  std::string path;  // relative to the corpus directory
  std::string face_label;
  std::string occlusion_label = kNone;
  std::string mask;  // relative path of the truth mask, "-" when clean
  std::string split;
};

/// What to write besides the gallery.
struct CorpusPlan {
  // Occluded images per class and category reserved for sample collection.
  int collect_per_class = 1;
  // Extra classes that appear only among the test images.
  int unknown_classes = 0;
  // Also write each test face unoccluded.
  bool clean_tests = true;

  void validate() const {
    if (collect_per_class < 0 || unknown_classes < 0)
      throw Error(ErrorCode::BadSpec, "corpus counts must be >= 0");
  }
};

namespace corpus_detail {

inline std::string image_name(int cls, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03d_%04d", cls, index);
  return buf;
}

// Instance seeds differ by split so no occluder is reused across splits.
inline std::uint64_t instance(std::uint64_t split_tag, int cls, int index) {
  using synth_detail::mix;
  return mix(mix(split_tag, std::uint64_t(cls)), std::uint64_t(index));
}

}  // namespace corpus_detail

inline void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "path\tface_label\tocclusion_label\tmask\tsplit\n";
  for (const auto& e : entries)
    out << e.path << '\t' << e.face_label << '\t' << e.occlusion_label << '\t' << e.mask << '\t' << e.split << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& corpus_dir) {
  const fs::path path = corpus_dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("path\t", 0) != 0)
    throw Error(ErrorCode::Io, path.string() + ": missing header");
  std::vector<ManifestEntry> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 5) throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    out.push_back({f[0], f[1], f[2], f[3], f[4]});
  }
  return out;
}

/// Writes gallery, collection and test images of `spec` under dir and returns the manifest.
inline std::vector<ManifestEntry> write_corpus(const SynthSpec& spec, const CorpusPlan& plan, const fs::path& dir) {
  using corpus_detail::image_name;
  using corpus_detail::instance;
  plan.validate();
  SynthSpec all = spec;
  all.classes = spec.classes + plan.unknown_classes;
  const FaceModel model(all);
  std::vector<ManifestEntry> entries;

  auto put = [&](const fs::path& rel, const ImageVector& img) {
    fs::create_directories((dir / rel).parent_path());
    io::write_pgm(dir / rel, unflatten(img));
  };
  auto put_occluded = [&](const std::string& split, int cls, int index, const OcclusionShape& shape,
                          std::uint64_t tag) {
    const OccludedImage o = apply_occlusion(model.image(cls, index), shape, all, instance(tag, cls, index));
    const fs::path base = fs::path(split) / shape.name / image_name(cls, index);
    const std::string img = base.string() + ".pgm", mask = base.string() + "_mask.pgm";
    put(img, o.occluded);
    fs::create_directories((dir / mask).parent_path());
    io::write_pgm(dir / mask, io::mask_image(o.truth));
    entries.push_back({img, class_label(cls), shape.name, mask, split});
  };

  for (int c = 0; c < spec.classes; ++c)
    for (int j = 0; j < spec.samples_per_class; ++j) {
      const std::string rel = (fs::path(kSplitTrain) / (image_name(c, j) + ".pgm")).string();
      put(rel, model.image(c, j));
      entries.push_back({rel, class_label(c), kNone, "-", kSplitTrain});
    }
  // Collection faces sit past the test indices so the two never coincide.
  const int collect_base = spec.samples_per_class + spec.test_per_class;
  for (const auto& shape : spec.occlusion_shapes)
    for (int c = 0; c < spec.classes; ++c)
      for (int j = 0; j < plan.collect_per_class; ++j)
        put_occluded(kSplitCollect, c, collect_base + j, shape, 0xC011EC7);
  for (int c = 0; c < all.classes; ++c)
    for (int j = 0; j < spec.test_per_class; ++j) {
      const int index = spec.samples_per_class + j;
      if (plan.clean_tests) {
        const std::string rel = (fs::path(kSplitTest) / "clean" / (image_name(c, index) + ".pgm")).string();
        put(rel, model.image(c, index));
        entries.push_back({rel, class_label(c), kNone, "-", kSplitTest});
      }
      for (const auto& shape : spec.occlusion_shapes) put_occluded(kSplitTest, c, index, shape, 0x7E57);
    }
  write_manifest(dir / kManifestName, entries);
  return entries;
}

/// Reads one corpus image as raw intensities.
inline ImageVector read_image(const fs::path& corpus_dir, const ManifestEntry& e) {
  const ImageGrid g = io::read_pgm(corpus_dir / e.path);
  return vectorize(g, false);
}

/// Face dictionary from the train split at (height, width); one block per face label
/// in order of first appearance.
inline BlockedDictionary corpus_gallery(const fs::path& corpus_dir, const std::vector<ManifestEntry>& entries,
                                        int height, int width) {
  std::vector<std::string> labels;
  std::vector<std::vector<Vector>> cols;
  for (const auto& e : entries) {
    if (e.split != kSplitTrain) continue;
    ImageVector img = read_image(corpus_dir, e);
    if (img.height != height || img.width != width) img = downsample(img, height, width);
    auto it = std::find(labels.begin(), labels.end(), e.face_label);
    if (it == labels.end()) {
      labels.push_back(e.face_label);
      cols.emplace_back();
      it = labels.end() - 1;
    }
    cols[std::size_t(it - labels.begin())].push_back(img.data);
  }
  if (labels.empty()) throw Error(ErrorCode::EmptySamples, "corpus has no train images");
  Eigen::Index n = 0;
  for (const auto& c : cols) n += Eigen::Index(c.size());
  Matrix atoms(Eigen::Index(height) * width, n);
  std::vector<Block> blocks;
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const Eigen::Index begin = col;
    for (const auto& v : cols[k]) atoms.col(col++) = v;
    blocks.push_back({labels[k], BlockKind::Face, begin, col});
  }
  return BlockedDictionary(std::move(atoms), std::move(blocks), height, width);
}

}  // namespace soc
