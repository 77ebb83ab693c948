#ifndef MPP_IO_HPP_
#define MPP_IO_HPP_

// Run configuration (JSON), content hashes, CSV tables and output manifests.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "mpp/arrigoni.hpp"
#include "mpp/diagnostics.hpp"
#include "mpp/errors.hpp"
#include "mpp/lna.hpp"
#include "mpp/meanfield.hpp"
#include "mpp/process.hpp"

namespace mpp::io {

using json = nlohmann::json;

// Hash git assigns to a blob with these contents: sha1("blob <len>\0" + data).
inline std::string git_blob_sha1(std::string_view data) {
  const std::string header = "blob " + std::to_string(data.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Configuration

struct ModelBlock {
  std::string law = "logistic";
  double b = 2.0, d = 0.5, c = 0.25, gamma = 0.5, rho = 0.5, kappa = 0.2;
  std::size_t M_cap = 0;
  std::vector<double> birth_table, death_table;
  bool operator==(const ModelBlock&) const = default;
};

struct SimulationBlock {
  std::int64_t N = 1000;
  std::vector<std::int64_t> N_grid{100, 400, 1600, 6400};
  double T = 2.0;
  std::size_t replicas = 100;
  std::uint64_t seed = 1;
  std::size_t grid_points = 201;
  std::string method = "ssa";      // ssa | time_change
  std::string recording = "grid";  // grid (simulation.grid_points) | full (every event)
  std::uint64_t max_events = 100'000'000;
  bool operator==(const SimulationBlock&) const = default;
};

struct MeanfieldBlock {
  std::size_t M = 60;
  double rtol = 1e-9;
  double atol = 1e-12;
  bool operator==(const MeanfieldBlock&) const = default;
};

struct LnaBlock {
  double dt = 0.0;  // 0 picks dt with dt * max|B_jj| <= 0.1
  std::size_t M = 60;
  std::string sigma0 = "zero";  // zero | diagonal | stationary
  double sigma0_scale = 0.0;    // diagonal entries when sigma0 = diagonal
  std::size_t paths = 0;        // Euler-Maruyama endpoint samples to write
  bool operator==(const LnaBlock&) const = default;
};

struct StudyBlock {
  std::string select = "simulate";
  double r = 2.0;        // moment order
  double level = 0.99;   // moment quantile
  double band = 0.2;     // moment stability band
  double r0 = 22.0;      // exponents / check
  double zeta = 0.0;     // 0 picks the midpoint of the feasible interval
  std::size_t block = 5;
  double rel_tol = 0.15;
  std::size_t check_samples = 200;
  bool operator==(const StudyBlock&) const = default;
};

struct RunConfig {
  ModelBlock model;
  std::vector<double> x0{0.4, 0.0, 0.2, 0.0, 0.2, 0.0, 0.2};
  SimulationBlock simulation;
  MeanfieldBlock meanfield;
  LnaBlock lna;
  StudyBlock study;
  std::string output_dir = "out";
  unsigned threads = 0;
  bool operator==(const RunConfig&) const = default;
};

namespace detail {

// Strict reader: every key must be known, and the path of a bad value is reported.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.emplace_back(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && std::is_integral_v<T>) {
        if (it->is_number_integer() && it->template get<std::int64_t>() < 0)
          throw ConfigError("must be nonnegative", full(key));
      }
      if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer", full(key));
      }
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value: ") + e.what(), full(key));
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& sub(const char* key) {
    seen_.emplace_back(key);
    return obj_.at(key);
  }
  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError("unknown key", full(k));
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"law", c.model.law},     {"b", c.model.b},         {"d", c.model.d},
                {"c", c.model.c},         {"gamma", c.model.gamma}, {"rho", c.model.rho},
                {"kappa", c.model.kappa}, {"M_cap", c.model.M_cap}, {"birth_table", c.model.birth_table},
                {"death_table", c.model.death_table}};
  j["x0"] = c.x0;
  const auto& s = c.simulation;
  j["simulation"] = {{"N", s.N},
                     {"N_grid", s.N_grid},
                     {"T", s.T},
                     {"replicas", s.replicas},
                     {"seed", s.seed},
                     {"grid_points", s.grid_points},
                     {"method", s.method},
                     {"recording", s.recording},
                     {"max_events", s.max_events}};
  j["meanfield"] = {{"M", c.meanfield.M}, {"rtol", c.meanfield.rtol}, {"atol", c.meanfield.atol}};
  j["lna"] = {{"dt", c.lna.dt},
              {"M", c.lna.M},
              {"sigma0", c.lna.sigma0},
              {"sigma0_scale", c.lna.sigma0_scale},
              {"paths", c.lna.paths}};
  const auto& st = c.study;
  j["study"] = {{"select", st.select}, {"r", st.r},       {"level", st.level},
                {"band", st.band},     {"r0", st.r0},     {"zeta", st.zeta},
                {"block", st.block},   {"rel_tol", st.rel_tol}, {"check_samples", st.check_samples}};
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

/*
 * Missing entries keep their defaults. When `require_model` is set (a config
 * file was given), the model block and its law must be spelled out.
 */
inline RunConfig from_json(const json& j, bool require_model = false) {
  RunConfig c;
  detail::Reader root(j, "");
  if (require_model && !root.has("model")) throw ConfigError("missing required key", "model");
  if (root.has("model")) {
    detail::Reader r(root.sub("model"), "model");
    if (require_model && !r.has("law")) throw ConfigError("missing required key", "model.law");
    r.get("law", c.model.law);
    r.get("b", c.model.b);
    r.get("d", c.model.d);
    r.get("c", c.model.c);
    r.get("gamma", c.model.gamma);
    r.get("rho", c.model.rho);
    r.get("kappa", c.model.kappa);
    r.get("M_cap", c.model.M_cap);
    r.get("birth_table", c.model.birth_table);
    r.get("death_table", c.model.death_table);
    r.finish();
  }
  root.get("x0", c.x0);
  if (root.has("simulation")) {
    detail::Reader r(root.sub("simulation"), "simulation");
    auto& s = c.simulation;
    r.get("N", s.N);
    r.get("N_grid", s.N_grid);
    r.get("T", s.T);
    r.get("replicas", s.replicas);
    r.get("seed", s.seed);
    r.get("grid_points", s.grid_points);
    r.get("method", s.method);
    r.get("recording", s.recording);
    r.get("max_events", s.max_events);
    r.finish();
  }
  if (root.has("meanfield")) {
    detail::Reader r(root.sub("meanfield"), "meanfield");
    r.get("M", c.meanfield.M);
    r.get("rtol", c.meanfield.rtol);
    r.get("atol", c.meanfield.atol);
    r.finish();
  }
  if (root.has("lna")) {
    detail::Reader r(root.sub("lna"), "lna");
    r.get("dt", c.lna.dt);
    r.get("M", c.lna.M);
    r.get("sigma0", c.lna.sigma0);
    r.get("sigma0_scale", c.lna.sigma0_scale);
    r.get("paths", c.lna.paths);
    r.finish();
  }
  if (root.has("study")) {
    detail::Reader r(root.sub("study"), "study");
    auto& s = c.study;
    r.get("select", s.select);
    r.get("r", s.r);
    r.get("level", s.level);
    r.get("band", s.band);
    r.get("r0", s.r0);
    r.get("zeta", s.zeta);
    r.get("block", s.block);
    r.get("rel_tol", s.rel_tol);
    r.get("check_samples", s.check_samples);
    r.finish();
  }
  root.get("output_dir", c.output_dir);
  root.get("threads", c.threads);
  root.finish();
  return c;
}

// Parse errors carry nlohmann's "line L, column C" position.
inline RunConfig parse_config(const std::string& text, bool require_model = true) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "<parse>");
  }
  return from_json(j, require_model);
}

inline RunConfig load_config(const std::filesystem::path& p) {
  std::string text;
  try {
    text = read_file(p);
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), "--config");
  }
  return parse_config(text, true);
}

inline std::string to_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

// Canonical form: sorted keys, compact, without output_dir and threads
// (neither affects the data).
inline std::string canonical_config(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("threads");
  return j.dump();
}

inline std::string config_hash(const RunConfig& c) { return git_blob_sha1(canonical_config(c)); }

inline arrigoni::ModelSpec to_model(const RunConfig& c) {
  arrigoni::ModelSpec m;
  const auto law = arrigoni::parse_law(c.model.law);
  if (!law) throw ConfigError("unknown law '" + c.model.law + "'", "model.law");
  m.law = *law;
  m.b = c.model.b;
  m.d = c.model.d;
  m.c = c.model.c;
  m.gamma = c.model.gamma;
  m.rho = c.model.rho;
  m.kappa = c.model.kappa;
  m.birth_table = c.model.birth_table;
  m.death_table = c.model.death_table;
  m.cap = c.model.M_cap;
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "model");
  }
  return m;
}

inline diagnostics::Method to_method(const RunConfig& c) {
  if (c.simulation.method == "ssa") return diagnostics::Method::kSsa;
  if (c.simulation.method == "time_change") return diagnostics::Method::kTimeChange;
  throw ConfigError("method must be ssa or time_change", "simulation.method");
}

// Semantic checks beyond types; throws ConfigError naming the key.
inline void validate(const RunConfig& c) {
  to_model(c);
  to_method(c);
  auto need = [](bool ok, const char* what, const char* key) {
    if (!ok) throw ConfigError(what, key);
  };
  double total = 0.0;
  for (double v : c.x0) {
    need(v >= 0.0 && std::isfinite(v), "entries must be >= 0", "x0");
    total += v;
  }
  need(!c.x0.empty() && std::abs(total - 1.0) <= 1e-9, "must be a probability vector", "x0");
  const auto& s = c.simulation;
  need(s.N >= 1, "must be >= 1", "simulation.N");
  for (auto n : s.N_grid) need(n >= 1, "entries must be >= 1", "simulation.N_grid");
  need(s.T > 0.0 && std::isfinite(s.T), "must be > 0", "simulation.T");
  need(s.replicas >= 1, "must be >= 1", "simulation.replicas");
  need(s.grid_points >= 2, "must be >= 2", "simulation.grid_points");
  need(s.recording == "full" || s.recording == "grid", "must be full or grid", "simulation.recording");
  need(s.max_events >= 1, "must be >= 1", "simulation.max_events");
  need(c.meanfield.M >= 1 && c.meanfield.M <= meanfield::kMaxTruncation, "truncation must lie in [1, 2000]",
       "meanfield.M");
  need(c.meanfield.rtol > 0.0 && c.meanfield.atol > 0.0, "tolerances must be > 0", "meanfield.rtol");
  need(c.lna.M >= 1 && c.lna.M <= meanfield::kMaxTruncation, "truncation must lie in [1, 2000]", "lna.M");
  need(c.lna.dt >= 0.0, "must be >= 0", "lna.dt");
  need(c.lna.sigma0 == "zero" || c.lna.sigma0 == "diagonal" || c.lna.sigma0 == "stationary",
       "must be zero, diagonal or stationary", "lna.sigma0");
  need(c.lna.sigma0_scale >= 0.0, "must be >= 0", "lna.sigma0_scale");
  need(c.study.r >= 0.0, "must be >= 0", "study.r");
  need(c.study.level > 0.0 && c.study.level < 1.0, "must lie in (0, 1)", "study.level");
  need(c.study.r0 > 0.0, "must be > 0", "study.r0");
  need(c.study.zeta >= 0.0, "must be >= 0", "study.zeta");
  need(c.study.block >= 1, "must be >= 1", "study.block");
}

inline diagnostics::StudySetup to_setup(const RunConfig& c) {
  diagnostics::StudySetup s;
  s.model = to_model(c);
  s.x0 = DensityVector(c.x0);
  s.T = c.simulation.T;
  s.M = c.meanfield.M;
  s.grid_points = c.simulation.grid_points;
  s.seed = c.simulation.seed;
  s.threads = c.threads;
  s.method = to_method(c);
  s.tol = {c.meanfield.rtol, c.meanfield.atol};
  return s;
}

// ---------------------------------------------------------------------------
// CSV tables

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string_view> header) {
    bool first = true;
    for (auto h : header) {
      if (!first) text_ += ',';
      text_ += h;
      first = false;
    }
    text_ += '\n';
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((append(cells, first)), ...);
    text_ += '\n';
  }

  const std::string& text() const { return text_; }

 private:
  template <typename T>
  void append(const T& v, bool& first) {
    if (!first) text_ += ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>) {
      text_ += format_double(v);
    } else if constexpr (std::is_integral_v<T>) {
      text_ += std::to_string(v);
    } else {
      text_ += std::string_view(v);
    }
  }

  std::string text_;
};

// (replica, time, type_index, count), nonzero counts only.
inline void trajectory_rows(Csv& csv, std::size_t replica, const JumpTrajectory& traj) {
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& d = traj.states[k].dense();
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d[j] != 0) csv.row(replica, traj.times[k], j, d[j]);
  }
}

inline Csv trajectory_csv() { return Csv{"replica", "time", "type_index", "count"}; }

inline std::string meanfield_csv(const meanfield::MeanFieldSolution& mf) {
  Csv csv{"time", "type_index", "density"};
  for (std::size_t k = 0; k < mf.grid.size(); ++k)
    for (std::size_t i = 0; i < mf.values[k].size(); ++i) csv.row(mf.grid[k], i, mf.values[k][i]);
  return csv.text();
}

inline std::string covariance_csv(const std::vector<double>& times, const std::vector<Eigen::MatrixXd>& cov) {
  Csv csv{"time", "i", "j", "cov_ij"};
  for (std::size_t k = 0; k < times.size(); ++k)
    for (Eigen::Index i = 0; i < cov[k].rows(); ++i)
      for (Eigen::Index j = i; j < cov[k].cols(); ++j) csv.row(times[k], i, j, cov[k](i, j));
  return csv.text();
}

inline Csv study_csv() { return Csv{"study", "N", "replica", "statistic", "value"}; }

// ---------------------------------------------------------------------------
// Output directory with manifest

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + root_.string() + ": " + ec.message());
  }

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& name, const std::string& content) {
    const auto p = root_ / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
    out.close();
    if (!out) throw std::runtime_error("write failed: " + p.string());
    files_.push_back({name, content.size(), git_blob_sha1(content)});
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  // manifest.json lists every file written through this object.
  void finish(const std::string& command, const std::string& hash, std::uint64_t seed) {
    json files = json::array();
    for (const auto& f : files_) files.push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha1", f.sha1}});
    const json m{{"command", command}, {"config_hash", hash}, {"seed", seed}, {"files", files}};
    std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write manifest");
  }

 private:
  struct Entry {
    std::string path;
    std::size_t bytes;
    std::string sha1;
  };
  std::filesystem::path root_;
  std::vector<Entry> files_;
};

}  // namespace mpp::io

#endif  // MPP_IO_HPP_
