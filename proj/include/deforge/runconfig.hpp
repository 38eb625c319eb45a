#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deforge/core.hpp"
#include "deforge/equation.hpp"
#include "deforge/synth.hpp"
#include "deforge/toysolver.hpp"
#include "json.hpp"

namespace deforge {

// Raised for anything wrong with a run configuration; the CLI maps it to the
// usage/config exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int runconfig_schema_version = 1;

// One generation run, parsed and validated from a JSON file. PDE families
// (navier_stokes, navier_cauchy, elastic_wave) describe a grid plus a synth
// band; ODE families (bouc_wen, lorenz) describe a series shape plus a
// trajectory. Family parameters land in the struct matching `family`.
struct RunConfig {
  Family family = Family::navier_stokes;

  Index points = 64;
  Index time_points = 64;
  double length = 2.0 * std::numbers::pi;
  double duration = 1.0;

  Index steps = 1024;
  double horizon = 4.0;

  SynthParams synth;
  TrajectoryParams trajectory;

  NsParams ns;
  SncParams snc;
  WaveParams wave;
  BoucWenParams bouc_wen;
  LorenzParams lorenz;

  Index count = 1;
  std::uint64_t seed = 1;
  int dilation = 1;
  bool require_compatible = true;
  std::string out;
  int workers = 0;

  std::string text;  // raw file contents, echoed into the dataset index

  bool is_pde() const {
    return family == Family::navier_stokes || family == Family::navier_cauchy ||
           family == Family::elastic_wave;
  }
};

namespace detail {

using nlohmann::json;

inline void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void check_keys(const json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : obj.items())
    if (!ok.count(item.key())) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
}

inline double num(const json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::int64_t integer(const json& obj, const std::string& where, const char* key,
                            std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

inline bool boolean(const json& obj, const std::string& where, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

inline std::string text_field(const json& obj, const std::string& where, const char* key,
                              std::string fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

// Accepts a scalar (uniform diagonal) or a full row-major nested array.
inline MatrixX<double> square_matrix(const json& v, const std::string& where, int n) {
  if (v.is_number())
    return v.get<double>() * MatrixX<double>::Identity(n, n);
  if (!v.is_array() || Index(v.size()) != n)
    throw ConfigError(where + ": expected a scalar or an " + std::to_string(n) + "x" +
                      std::to_string(n) + " array");
  MatrixX<double> m(n, n);
  for (int i = 0; i < n; ++i) {
    const auto& row = v.at(i);
    if (!row.is_array() || Index(row.size()) != n)
      throw ConfigError(where + ": row " + std::to_string(i) + " has the wrong length");
    for (int j = 0; j < n; ++j) {
      if (!row.at(j).is_number()) throw ConfigError(where + ": expected numeric entries");
      m(i, j) = row.at(j).get<double>();
    }
  }
  return m;
}

inline ArrayX<double> coeff_vector(const json& v, const std::string& where, int n) {
  if (v.is_number()) return ArrayX<double>::Constant(n, v.get<double>());
  if (!v.is_array() || Index(v.size()) != n)
    throw ConfigError(where + ": expected a scalar or an array of length " + std::to_string(n));
  ArrayX<double> a(n);
  for (int i = 0; i < n; ++i) {
    if (!v.at(i).is_number()) throw ConfigError(where + ": expected numeric entries");
    a[i] = v.at(i).get<double>();
  }
  return a;
}

inline void parse_grid(const json& j, RunConfig& cfg) {
  if (!j.contains("grid")) throw ConfigError("config: PDE families need a \"grid\" section");
  const auto& g = j.at("grid");
  expect_object(g, "grid");
  check_keys(g, "grid", {"points", "time_points", "length", "duration"});
  cfg.points = integer(g, "grid", "points", 64);
  cfg.time_points = integer(g, "grid", "time_points",
                            cfg.family == Family::navier_cauchy ? 0 : 64);
  cfg.length = num(g, "grid", "length", 2.0 * std::numbers::pi);
  cfg.duration = num(g, "grid", "duration", 1.0);
  if (cfg.points < 4) throw ConfigError("grid.points: need at least 4");
  if (!(cfg.length > 0)) throw ConfigError("grid.length: must be positive");
  if (cfg.family == Family::navier_cauchy) {
    if (cfg.time_points != 0) throw ConfigError("grid.time_points: navier_cauchy is static");
  } else {
    if (cfg.time_points < 3) throw ConfigError("grid.time_points: need at least 3");
    if (!(cfg.duration > 0)) throw ConfigError("grid.duration: must be positive");
  }
}

inline void parse_synth(const json& j, RunConfig& cfg) {
  if (!j.contains("synth")) throw ConfigError("config: PDE families need a \"synth\" section");
  const auto& s = j.at("synth");
  expect_object(s, "synth");
  check_keys(s, "synth",
             {"k_lo", "k_hi", "shells", "modes_per_shell", "omega_lo", "omega_max", "amplitude",
              "exponent"});
  cfg.synth.k_lo = num(s, "synth", "k_lo", 0.5);
  cfg.synth.k_hi = num(s, "synth", "k_hi", 2.5);
  cfg.synth.shells = int(integer(s, "synth", "shells", 2));
  cfg.synth.modes_per_shell = int(integer(s, "synth", "modes_per_shell", 3));
  cfg.synth.omega_lo = num(s, "synth", "omega_lo", 0.0);
  cfg.synth.omega_max = num(s, "synth", "omega_max", -1.0);
  cfg.synth.target.amplitude = num(s, "synth", "amplitude", 1.0);
  cfg.synth.target.exponent = num(s, "synth", "exponent", -5.0 / 3.0);
  if (!(cfg.synth.k_lo > 0) || !(cfg.synth.k_hi > cfg.synth.k_lo))
    throw ConfigError("synth: need 0 < k_lo < k_hi");
  if (cfg.synth.shells < 1 || cfg.synth.modes_per_shell < 1)
    throw ConfigError("synth: shells and modes_per_shell must be at least 1");
}

inline void parse_series(const json& j, RunConfig& cfg) {
  if (!j.contains("series")) throw ConfigError("config: ODE families need a \"series\" section");
  const auto& s = j.at("series");
  expect_object(s, "series");
  check_keys(s, "series", {"steps", "duration"});
  cfg.steps = integer(s, "series", "steps", 1024);
  cfg.horizon = num(s, "series", "duration", 4.0);
  if (cfg.steps < 8) throw ConfigError("series.steps: need at least 8");
  if (!(cfg.horizon > 0)) throw ConfigError("series.duration: must be positive");
}

inline void parse_trajectory(const json& j, RunConfig& cfg) {
  if (!j.contains("trajectory"))
    throw ConfigError("config: ODE families need a \"trajectory\" section");
  const auto& t = j.at("trajectory");
  expect_object(t, "trajectory");
  check_keys(t, "trajectory",
             {"channels", "modes", "f_lo", "f_hi", "amplitude", "offset", "min_value"});
  cfg.trajectory.channels = int(integer(t, "trajectory", "channels", 1));
  cfg.trajectory.modes = int(integer(t, "trajectory", "modes", 3));
  cfg.trajectory.f_lo = num(t, "trajectory", "f_lo", 0.2);
  cfg.trajectory.f_hi = num(t, "trajectory", "f_hi", 1.0);
  cfg.trajectory.amplitude = num(t, "trajectory", "amplitude", 1.0);
  cfg.trajectory.offset = num(t, "trajectory", "offset", 0.0);
  cfg.trajectory.min_value =
      num(t, "trajectory", "min_value", -std::numeric_limits<double>::infinity());
  if (cfg.trajectory.channels < 1) throw ConfigError("trajectory.channels: need at least 1");
  if (cfg.trajectory.modes < 1) throw ConfigError("trajectory.modes: need at least 1");
  if (!(cfg.trajectory.f_lo > 0) || !(cfg.trajectory.f_hi >= cfg.trajectory.f_lo))
    throw ConfigError("trajectory: need 0 < f_lo <= f_hi");
  if (!(cfg.trajectory.amplitude > 0)) throw ConfigError("trajectory.amplitude: must be positive");
}

inline void parse_params(const json& j, RunConfig& cfg) {
  const json empty = json::object();
  const json& p = j.contains("params") ? j.at("params") : empty;
  expect_object(p, "params");
  switch (cfg.family) {
    case Family::navier_stokes:
      check_keys(p, "params", {"reynolds", "dealias"});
      cfg.ns.reynolds = num(p, "params", "reynolds", cfg.ns.reynolds);
      cfg.ns.dealias = boolean(p, "params", "dealias", cfg.ns.dealias);
      break;
    case Family::navier_cauchy:
      check_keys(p, "params", {"young", "poisson"});
      cfg.snc.young = num(p, "params", "young", cfg.snc.young);
      cfg.snc.poisson = num(p, "params", "poisson", cfg.snc.poisson);
      break;
    case Family::elastic_wave:
      check_keys(p, "params", {"rho", "lambda", "mu"});
      cfg.wave.rho = num(p, "params", "rho", cfg.wave.rho);
      cfg.wave.lambda = num(p, "params", "lambda", cfg.wave.lambda);
      cfg.wave.mu = num(p, "params", "mu", cfg.wave.mu);
      break;
    case Family::bouc_wen: {
      check_keys(p, "params", {"mass", "damping", "stiffness", "alpha", "a", "beta", "gamma", "n"});
      const int ndof = cfg.trajectory.channels;
      cfg.bouc_wen.mass = p.contains("mass") ? square_matrix(p.at("mass"), "params.mass", ndof)
                                             : MatrixX<double>::Identity(ndof, ndof);
      cfg.bouc_wen.damping = p.contains("damping")
                                 ? square_matrix(p.at("damping"), "params.damping", ndof)
                                 : MatrixX<double>(0.1 * MatrixX<double>::Identity(ndof, ndof));
      cfg.bouc_wen.stiffness = p.contains("stiffness")
                                   ? coeff_vector(p.at("stiffness"), "params.stiffness", ndof)
                                   : ArrayX<double>(ArrayX<double>::Constant(ndof, 2.0));
      cfg.bouc_wen.alpha = num(p, "params", "alpha", cfg.bouc_wen.alpha);
      cfg.bouc_wen.a = num(p, "params", "a", cfg.bouc_wen.a);
      cfg.bouc_wen.beta = num(p, "params", "beta", cfg.bouc_wen.beta);
      cfg.bouc_wen.gamma = num(p, "params", "gamma", cfg.bouc_wen.gamma);
      cfg.bouc_wen.n = num(p, "params", "n", cfg.bouc_wen.n);
      break;
    }
    case Family::lorenz:
      check_keys(p, "params", {"sigma", "rho", "beta", "x_floor"});
      cfg.lorenz.sigma = num(p, "params", "sigma", cfg.lorenz.sigma);
      cfg.lorenz.rho = num(p, "params", "rho", cfg.lorenz.rho);
      cfg.lorenz.beta = num(p, "params", "beta", cfg.lorenz.beta);
      cfg.lorenz.x_floor = num(p, "params", "x_floor", cfg.lorenz.x_floor);
      break;
  }
}

}  // namespace detail

// Parses and fully validates a run configuration. Throws ConfigError before
// any filesystem work happens, so a bad file never produces partial output.
inline RunConfig parse_run_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  detail::expect_object(j, "config");
  detail::check_keys(j, "config",
                     {"schema_version", "family", "grid", "synth", "series", "trajectory",
                      "params", "count", "seed", "dilation", "require_compatible", "out",
                      "workers"});

  const auto version = detail::integer(j, "config", "schema_version", runconfig_schema_version);
  if (version != runconfig_schema_version)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  if (!j.contains("family")) throw ConfigError("config: missing \"family\"");

  RunConfig cfg;
  cfg.text = text;
  try {
    cfg.family = family_from_string(detail::text_field(j, "config", "family", ""));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (cfg.is_pde()) {
    if (j.contains("series") || j.contains("trajectory"))
      throw ConfigError("config: PDE families take \"grid\"/\"synth\", not \"series\"/\"trajectory\"");
    detail::parse_grid(j, cfg);
    detail::parse_synth(j, cfg);
  } else {
    if (j.contains("grid") || j.contains("synth"))
      throw ConfigError("config: ODE families take \"series\"/\"trajectory\", not \"grid\"/\"synth\"");
    detail::parse_series(j, cfg);
    detail::parse_trajectory(j, cfg);
  }
  detail::parse_params(j, cfg);

  cfg.count = detail::integer(j, "config", "count", 1);
  if (cfg.count < 0) throw ConfigError("config.count: must be nonnegative");
  const auto seed = detail::integer(j, "config", "seed", 1);
  if (seed < 0) throw ConfigError("config.seed: must be nonnegative");
  cfg.seed = std::uint64_t(seed);
  cfg.dilation = int(detail::integer(j, "config", "dilation", 1));
  if (cfg.dilation < 1) throw ConfigError("config.dilation: must be at least 1");
  if (!cfg.is_pde() && cfg.dilation != 1)
    throw ConfigError("config.dilation: only PDE families support dilation");
  cfg.require_compatible = detail::boolean(j, "config", "require_compatible", true);
  cfg.out = detail::text_field(j, "config", "out", "");
  cfg.workers = int(detail::integer(j, "config", "workers", 0));
  if (cfg.workers < 0) throw ConfigError("config.workers: must be nonnegative");

  if (cfg.family == Family::lorenz) {
    if (cfg.trajectory.channels != 1)
      throw ConfigError("trajectory.channels: lorenz prescribes a single channel");
    const double low = cfg.trajectory.min_value;
    if (!(low >= cfg.lorenz.x_floor))
      throw ConfigError("trajectory.min_value: must be at least params.x_floor for lorenz");
  }
  if (cfg.is_pde() && cfg.dilation > 1) {
    const double unit = cfg.length / (2.0 * std::numbers::pi);
    const auto top = Index(std::llround(std::ceil(cfg.synth.k_hi * unit + 0.5)));
    if (2 * top * cfg.dilation >= cfg.points)
      throw ConfigError("config.dilation: raw modes would cross Nyquist; lower synth.k_hi, "
                        "lower the factor, or raise grid.points");
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// Conditioning-study configuration; every field mirrors CondnumConfig and an
// empty object keeps the defaults.
inline CondnumConfig parse_condnum_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  detail::expect_object(j, "config");
  detail::check_keys(j, "config",
                     {"schema_version", "grid_points", "time_points", "length", "duration",
                      "dilation", "seeds", "modes", "hidden", "blocks", "encoder_layers",
                      "init_gain", "train_steps", "rate", "master_seed", "threads"});
  const auto version = detail::integer(j, "config", "schema_version", runconfig_schema_version);
  if (version != runconfig_schema_version)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));

  CondnumConfig cfg;
  cfg.grid_points = detail::integer(j, "config", "grid_points", cfg.grid_points);
  cfg.time_points = detail::integer(j, "config", "time_points", cfg.time_points);
  cfg.length = detail::num(j, "config", "length", cfg.length);
  cfg.duration = detail::num(j, "config", "duration", cfg.duration);
  cfg.dilation = int(detail::integer(j, "config", "dilation", cfg.dilation));
  cfg.seeds = int(detail::integer(j, "config", "seeds", cfg.seeds));
  if (j.contains("modes")) {
    const auto& m = j.at("modes");
    if (!m.is_array() || m.empty()) throw ConfigError("config.modes: expected a nonempty array");
    cfg.modes.clear();
    for (const auto& v : m) {
      if (!v.is_number_integer()) throw ConfigError("config.modes: expected integers");
      cfg.modes.push_back(v.get<int>());
    }
  }
  cfg.hidden = int(detail::integer(j, "config", "hidden", cfg.hidden));
  cfg.blocks = int(detail::integer(j, "config", "blocks", cfg.blocks));
  cfg.encoder_layers = int(detail::integer(j, "config", "encoder_layers", cfg.encoder_layers));
  cfg.init_gain = detail::num(j, "config", "init_gain", cfg.init_gain);
  cfg.train_steps = detail::integer(j, "config", "train_steps", cfg.train_steps);
  cfg.rate = detail::num(j, "config", "rate", cfg.rate);
  const auto master = detail::integer(j, "config", "master_seed", std::int64_t(cfg.master_seed));
  if (master < 0) throw ConfigError("config.master_seed: must be nonnegative");
  cfg.master_seed = std::uint64_t(master);
  cfg.threads = int(detail::integer(j, "config", "threads", cfg.threads));
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline CondnumConfig load_condnum_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_condnum_config(ss.str());
}

}  // namespace deforge
