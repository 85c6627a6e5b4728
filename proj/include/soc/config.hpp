#pragma once

// Line-oriented key=value configuration with '#' comments, plus the mapping
// from keys onto the library's config structs.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "soc/classifier.hpp"
#include "soc/error.hpp"
#include "soc/learning.hpp"
#include "soc/mask.hpp"
#include "soc/solvers.hpp"
#include "soc/synth.hpp"

namespace soc {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::BadConfig, origin + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw Error(ErrorCode::BadConfig, origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_[key] = true;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument(*v);
      return d;
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadConfig, "key '" + key + "' expects a number, got '" + *v + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size())
      throw Error(ErrorCode::BadConfig, "key '" + key + "' expects an integer, got '" + *v + "'");
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
    if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
    throw Error(ErrorCode::BadConfig, "key '" + key + "' expects a boolean, got '" + *v + "'");
  }

  /// Comma-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      KeyValueConfig tmp;
      tmp.set(key, trim(item));
      out.push_back(tmp.get_double(key, 0.0));
    }
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

inline SolverConfig solver_config(const KeyValueConfig& c, SolverConfig s = {}) {
  s.epsilon = c.get_double("epsilon", s.epsilon);
  s.lambda = c.get_double("lambda", s.lambda);
  s.q_norm = c.get_double("q_norm", s.q_norm);
  s.max_iters = int(c.get_int("max_iters", s.max_iters));
  s.tol = c.get_double("tol", s.tol);
  s.validate();
  return s;
}

inline MaskEstimatorConfig mask_config(const KeyValueConfig& c, MaskEstimatorConfig m = {}) {
  m.h = int(c.get_int("h", m.h));
  m.beta = c.get_double("beta", m.beta);
  m.tau_schedule = c.get_doubles("tau_schedule", m.tau_schedule);
  m.max_outer_iters = int(c.get_int("max_outer_iters", m.max_outer_iters));
  const std::string nb = c.get_string("neighborhood", m.neighborhood == Neighborhood::Four ? "4" : "8");
  if (nb != "4" && nb != "8") throw Error(ErrorCode::BadConfig, "neighborhood must be 4 or 8");
  m.neighborhood = nb == "4" ? Neighborhood::Four : Neighborhood::Eight;
  m.degenerate_floor = c.get_double("degenerate_floor", m.degenerate_floor);
  m.validate();
  return m;
}

inline KsvdConfig ksvd_config(const KeyValueConfig& c, KsvdConfig k = {}) {
  k.atom_count = int(c.get_int("atoms", k.atom_count));
  k.sparsity_budget = int(c.get_int("sparsity_budget", k.sparsity_budget));
  k.iterations = int(c.get_int("ksvd_iterations", k.iterations));
  k.seed = std::uint64_t(c.get_int("seed", (long long)k.seed));
  k.l1_weight = c.get_double("l1_weight", k.l1_weight);
  return k;
}

inline ClassifierConfig classifier_config(const KeyValueConfig& c, ClassifierConfig k = {}) {
  k.solver = solver_config(c, k.solver);
  k.sparsity_mode = parse_sparsity_mode(c.get_string("mode", to_string(k.sparsity_mode)));
  k.auto_lambda = !c.has("lambda") && c.get_bool("auto_lambda", k.auto_lambda);
  k.theta_face = c.get_double("theta_face", k.theta_face);
  k.theta_occlusion = c.get_double("theta_occlusion", k.theta_occlusion);
  k.baseline_identity_occlusion = c.get_bool("baseline_identity_occlusion", k.baseline_identity_occlusion);
  k.validate();
  return k;
}

/// Occlusion shapes are given as "name:region:area:level" entries separated by ';'.
inline std::vector<OcclusionShape> parse_shapes(const std::string& text) {
  std::vector<OcclusionShape> out;
  std::stringstream ss(text);
  std::string entry;
  while (std::getline(ss, entry, ';')) {
    if (entry.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream es(entry);
    std::string p;
    while (std::getline(es, p, ':')) parts.push_back(p);
    if (parts.size() != 4) throw Error(ErrorCode::BadConfig, "shape '" + entry + "' is not name:region:area:level");
    KeyValueConfig tmp;
    tmp.set("area", parts[2]);
    tmp.set("level", parts[3]);
    out.push_back({parts[0], parse_region(parts[1]), tmp.get_double("area", 0), tmp.get_double("level", 0)});
  }
  return out;
}

inline SynthSpec synth_spec(const KeyValueConfig& c, SynthSpec s = {}) {
  s.classes = int(c.get_int("classes", s.classes));
  s.samples_per_class = int(c.get_int("samples_per_class", s.samples_per_class));
  s.test_per_class = int(c.get_int("test_per_class", s.test_per_class));
  s.height = int(c.get_int("height", s.height));
  s.width = int(c.get_int("width", s.width));
  s.subspace_dim = int(c.get_int("subspace_dim", s.subspace_dim));
  if (auto shapes = c.raw("shapes")) s.occlusion_shapes = parse_shapes(*shapes);
  s.noise_sigma = c.get_double("noise_sigma", s.noise_sigma);
  s.seed = std::uint64_t(c.get_int("seed", (long long)s.seed));
  s.common_amplitude = c.get_double("common_amplitude", s.common_amplitude);
  s.class_amplitude = c.get_double("class_amplitude", s.class_amplitude);
  s.texture_contrast = c.get_double("texture_contrast", s.texture_contrast);
  s.texture_jitter = c.get_double("texture_jitter", s.texture_jitter);
  return s;
}

}  // namespace soc
