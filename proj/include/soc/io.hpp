#pragma once

// File formats: binary PGM images (P5, maxval 255) and the two-file
// dictionary format, a JSON metadata file next to a raw little-endian
// float64 column-major matrix.

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "soc/core.hpp"
#include "soc/learning.hpp"

namespace soc::io {

namespace fs = std::filesystem;

inline void write_pgm(const fs::path& path, const ImageGrid& img) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>(std::lround(img.values[i] * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace detail

inline ImageGrid read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  if (detail::next_token(in) != "P5") throw Error(ErrorCode::Io, path.string() + " is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::next_token(in));
    h = std::stoi(detail::next_token(in));
    maxval = std::stoi(detail::next_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::Io, "malformed PGM header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval != 255) throw Error(ErrorCode::Io, "unsupported PGM geometry or maxval in " + path.string());
  std::vector<unsigned char> bytes(std::size_t(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (in.gcount() != std::streamsize(bytes.size())) throw Error(ErrorCode::Io, "truncated PGM " + path.string());
  std::vector<double> vals(bytes.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = bytes[i] / 255.0;
  return ImageGrid(h, w, std::move(vals));
}

/// Maps |v| / max|v| to [0,1] for viewing signed vectors (errors, patterns).
inline ImageGrid magnitude_image(const ImageVector& v) {
  const double peak = v.data.cwiseAbs().maxCoeff();
  std::vector<double> vals(std::size_t(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) vals[std::size_t(i)] = peak > 0 ? std::abs(v.data[i]) / peak : 0.0;
  return ImageGrid(v.height, v.width, std::move(vals));
}

inline ImageGrid mask_image(const OcclusionMask& z) {
  std::vector<double> vals(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) vals[i] = z.support[i] ? 1.0 : 0.0;
  return ImageGrid(z.height, z.width, std::move(vals));
}

inline OcclusionMask read_mask(const fs::path& path) {
  const ImageGrid g = read_pgm(path);
  std::vector<std::uint8_t> s(g.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = g.values[i] >= 0.5 ? 1 : 0;
  return OcclusionMask(std::move(s), g.height, g.width);
}

/// "<base>.json" and "<base>.bin" for a dictionary stored under `base`.
inline fs::path meta_path(const fs::path& base) { return fs::path(base.string() + ".json"); }
inline fs::path matrix_path(const fs::path& base) { return fs::path(base.string() + ".bin"); }

inline void write_matrix(const fs::path& path, const Matrix& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  std::vector<unsigned char> buf(std::size_t(a.size()) * 8);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(a.data()[i]);  // Eigen storage is column-major
    for (int b = 0; b < 8; ++b) buf[std::size_t(i) * 8 + std::size_t(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline Matrix read_matrix(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<unsigned char> buf(std::size_t(rows * cols) * 8);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (in.gcount() != std::streamsize(buf.size()) || in.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::Io, "matrix file " + path.string() + " does not match the declared shape");
  Matrix a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(buf[std::size_t(i) * 8 + std::size_t(b)]) << (8 * b);
    a.data()[i] = std::bit_cast<double>(bits);
  }
  return a;
}

inline nlohmann::json dictionary_meta(const BlockedDictionary& d) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : d.blocks())
    blocks.push_back({{"label", b.label}, {"kind", to_string(b.kind)}, {"begin", b.begin}, {"end", b.end}});
  return {{"m", d.m()}, {"n", d.n()}, {"height", d.height()}, {"width", d.width()}, {"blocks", blocks}};
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void save_dictionary(const fs::path& base, const BlockedDictionary& d, const nlohmann::json& extra = {}) {
  nlohmann::json meta = dictionary_meta(d);
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  write_json(meta_path(base), meta);
  write_matrix(matrix_path(base), d.atoms());
}

inline BlockedDictionary load_dictionary(const fs::path& base, nlohmann::json* meta_out = nullptr) {
  const nlohmann::json meta = read_json(meta_path(base));
  try {
    const Eigen::Index m = meta.at("m").get<Eigen::Index>(), n = meta.at("n").get<Eigen::Index>();
    std::vector<Block> blocks;
    for (const auto& b : meta.at("blocks")) {
      const std::string kind = b.at("kind").get<std::string>();
      if (kind != "face" && kind != "occlusion") throw Error(ErrorCode::Io, "unknown block kind '" + kind + "'");
      blocks.push_back({b.at("label").get<std::string>(), kind == "face" ? BlockKind::Face : BlockKind::Occlusion,
                        b.at("begin").get<Eigen::Index>(), b.at("end").get<Eigen::Index>()});
    }
    if (meta_out) *meta_out = meta;
    return BlockedDictionary(read_matrix(matrix_path(base), m, n), std::move(blocks), meta.value("height", 0),
                             meta.value("width", 0));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "bad dictionary metadata in " + meta_path(base).string() + ": " + e.what());
  }
}

inline void save_samples(const fs::path& base, const OcclusionSampleSet& set) {
  save_dictionary(base, set.as_dictionary(),
                  {{"category", set.category}, {"strategy", to_string(set.strategy)}, {"labeled", set.labeled},
                   {"dropped", set.dropped}});
  write_matrix(matrix_path(base), set.samples);  // unnormalized copy, bit-exact on reload
}

inline OcclusionSampleSet load_samples(const fs::path& base) {
  nlohmann::json meta;
  const BlockedDictionary d = load_dictionary(base, &meta);
  OcclusionSampleSet set;
  // Raw values, so a reload does not renormalize already unit-norm columns.
  set.samples = read_matrix(matrix_path(base), d.m(), d.n());
  set.height = d.height();
  set.width = d.width();
  set.category = meta.value("category", d.blocks().empty() ? std::string() : d.blocks().front().label);
  set.strategy = parse_strategy(meta.value("strategy", std::string("soc")));
  set.labeled = meta.value("labeled", true);
  set.dropped = meta.value("dropped", 0);
  return set;
}

}  // namespace soc::io
