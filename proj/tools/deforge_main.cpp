#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deforge/dataio.hpp"
#include "deforge/pipeline.hpp"
#include "deforge/runconfig.hpp"
#include "deforge/sdo.hpp"
#include "deforge/version.hpp"

namespace fs = std::filesystem;
using namespace deforge;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_verification = 1;
constexpr int exit_usage = 2;
constexpr int exit_runtime = 3;

struct GenerateArgs {
  std::string config;
  std::int64_t count = -1;
  std::int64_t seed = -1;
  std::string out;
  int workers = -1;
};

struct VerifyArgs {
  std::string dataset;
  double tol = 1e-12;
  std::string report;
};

struct DilateArgs {
  std::string in;
  std::string out;
  int factor = 1;
  bool inverse = false;
  int dims = 2;
};

struct SpectrumArgs {
  std::string in;
  std::string out;
  int dims = 2;
  std::int64_t time = 0;
};

struct CondnumArgs {
  std::string config;
  std::string out;
  int workers = -1;
};

// Reconstructs the field a blob stores: leading dim is components, an extra
// leading dim beyond the spatial ones is time slabs. Spatial extents are set
// to 2 pi so integer modes coincide with physical wavenumbers.
Field field_from_blob(const BlobData& blob, int dims) {
  const std::size_t nd = blob.dims.size();
  if (dims < 1 || dims > 3) throw ConfigError("--dims must be 1, 2, or 3");
  if (nd != std::size_t(dims) + 1 && nd != std::size_t(dims) + 2)
    throw ConfigError("blob has " + std::to_string(nd) + " dims; expected components" +
                      (dims == 1 ? " [+ time] + 1 spatial" : " [+ time] + spatial"));
  const bool timed = nd == std::size_t(dims) + 2;

  Grid g;
  g.dims = dims;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int j = 0; j < 3; ++j) {
    g.points[std::size_t(j)] = 1;
    g.extents[std::size_t(j)] = 1.0;
    g.periodic[std::size_t(j)] = true;
  }
  for (int j = 0; j < dims; ++j) {
    g.points[std::size_t(j)] = Index(blob.dims[std::size_t(timed ? 2 + j : 1 + j)]);
    g.extents[std::size_t(j)] = two_pi;
  }
  if (timed) {
    g.time_points = Index(blob.dims[1]);
    g.duration = 1.0;
  }
  g.validate();

  auto f = Field::zeros(g, int(blob.dims[0]));
  if (f.data.size() != blob.data.size())
    throw ConfigError("blob payload does not match the declared shape");
  f.data = blob.data;
  return f;
}

void print_dilation_report(const DilationReport& rep) {
  std::printf("factor %d  modes retained %lld  dropped %lld  energy retained %.12f  %s\n",
              rep.factor, static_cast<long long>(rep.modes_retained),
              static_cast<long long>(rep.modes_dropped), rep.retained_energy_fraction,
              rep.compatible ? "compatible" : "incompatible");
}

int run_generate(const GenerateArgs& a) {
  RunConfig cfg;
  try {
    cfg = load_run_config(a.config);
    if (a.count >= 0) cfg.count = a.count;
    if (a.seed >= 0) cfg.seed = std::uint64_t(a.seed);
    if (!a.out.empty()) cfg.out = a.out;
    if (a.workers >= 0) cfg.workers = a.workers;
    if (cfg.out.empty())
      throw ConfigError("config: no output directory; set \"out\" or pass --out");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "deforge generate: %s\n", e.what());
    return exit_usage;
  }
  try {
    const auto report = generate_dataset(cfg, cfg.out);
    std::printf(
        "family %s  samples %lld  same-op max %.3e  cross-op max %.3e  %.2f s  %.2f samples/s\n",
        family_name(cfg.family), static_cast<long long>(report.count), report.same_op_max,
        report.cross_op_max, report.wall_seconds, report.samples_per_second());
    return exit_ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge generate: %s\n", e.what());
    return exit_runtime;
  }
}

int run_verify(const VerifyArgs& a) {
  if (!fs::exists(a.dataset)) {
    std::fprintf(stderr, "deforge verify: dataset not found: %s\n", a.dataset.c_str());
    return exit_usage;
  }
  DatasetReport rep;
  try {
    rep = validate_dataset(a.dataset, a.tol);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge verify: %s\n", e.what());
    return exit_verification;
  }

  JsonValue::Object root;
  root["ok"] = rep.ok;
  root["checked"] = std::uint64_t(rep.checked);
  root["drift_tolerance"] = a.tol;
  JsonValue::Array samples;
  for (const auto& s : rep.samples) {
    JsonValue::Object row;
    row["name"] = s.name;
    row["ok"] = s.ok;
    row["same_op_max_rel"] = s.same_op;
    row["cross_op_max_rel"] = s.cross_op;
    row["drift"] = s.drift;
    row["message"] = s.message;
    samples.push_back(std::move(row));
  }
  root["samples"] = std::move(samples);
  const std::string text = JsonValue(std::move(root)).dump();

  if (a.report.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    try {
      save_bytes(a.report, std::vector<std::uint8_t>(text.begin(), text.end()));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "deforge verify: %s\n", e.what());
      return exit_runtime;
    }
  }
  for (const auto& s : rep.samples)
    if (!s.ok) std::fprintf(stderr, "deforge verify: %s: %s\n", s.name.c_str(), s.message.c_str());
  return rep.ok ? exit_ok : exit_verification;
}

int run_dilate(const DilateArgs& a) {
  if (a.factor < 1) {
    std::fprintf(stderr, "deforge dilate: --factor must be at least 1\n");
    return exit_usage;
  }
  try {
    Field f;
    std::vector<std::uint64_t> dims;
    try {
      BlobData blob = load_blob(a.in);
      dims = blob.dims;
      f = field_from_blob(blob, a.dims);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "deforge dilate: %s\n", e.what());
      return exit_usage;
    }
    const auto spec = dft_forward(f);
    const DilationReport rep =
        a.inverse ? undilation_report(spec, a.factor) : dilation_report(spec, a.factor);
    const Field out = dft_inverse(a.inverse ? undilate(spec, a.factor) : dilate(spec, a.factor));
    save_blob(a.out, out.data, dims);
    print_dilation_report(rep);
    return exit_ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge dilate: %s\n", e.what());
    return exit_runtime;
  }
}

int run_spectrum(const SpectrumArgs& a) {
  try {
    Field f;
    try {
      f = field_from_blob(load_blob(a.in), a.dims);
      if (a.time < 0 || a.time >= time_slabs(f.grid))
        throw ConfigError("--time is outside the stored slabs");
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "deforge spectrum: %s\n", e.what());
      return exit_usage;
    }
    const auto r = radial_spectrum(f, a.time);
    std::string csv = "k,energy\n";
    char line[80];
    for (Index b = 0; b < r.k.size(); ++b) {
      std::snprintf(line, sizeof line, "%.17g,%.17g\n", r.k[b], r.energy[b]);
      csv += line;
    }
    if (a.out.empty() || a.out == "-") {
      std::fputs(csv.c_str(), stdout);
    } else {
      save_bytes(a.out, std::vector<std::uint8_t>(csv.begin(), csv.end()));
    }
    return exit_ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge spectrum: %s\n", e.what());
    return exit_runtime;
  }
}

JsonValue condnum_config_json(const CondnumConfig& cfg) {
  JsonValue::Object o;
  o["grid_points"] = std::int64_t(cfg.grid_points);
  o["time_points"] = std::int64_t(cfg.time_points);
  o["length"] = cfg.length;
  o["duration"] = cfg.duration;
  o["dilation"] = std::int64_t(cfg.dilation);
  o["seeds"] = std::int64_t(cfg.seeds);
  JsonValue::Array modes;
  for (int k : cfg.modes) modes.emplace_back(std::int64_t(k));
  o["modes"] = std::move(modes);
  o["hidden"] = std::int64_t(cfg.hidden);
  o["blocks"] = std::int64_t(cfg.blocks);
  o["encoder_layers"] = std::int64_t(cfg.encoder_layers);
  o["init_gain"] = cfg.init_gain;
  o["train_steps"] = std::int64_t(cfg.train_steps);
  o["rate"] = cfg.rate;
  o["master_seed"] = std::uint64_t(cfg.master_seed);
  o["threads"] = std::int64_t(cfg.threads);
  return JsonValue(std::move(o));
}

int run_condnum(const CondnumArgs& a) {
  CondnumConfig cfg;
  try {
    if (!a.config.empty()) cfg = load_condnum_config(a.config);
    if (a.workers >= 0) cfg.threads = a.workers;
    cfg.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge condnum: %s\n", e.what());
    return exit_usage;
  }
  try {
    std::printf("running conditioning study: %d seeds, %lld train steps each\n", cfg.seeds,
                static_cast<long long>(cfg.train_steps));
    std::fflush(stdout);
    const CondnumReport rep = condnum_study(cfg);

    fs::create_directories(a.out);
    double s_dev = 0;
    for (const auto& row : rep.rows)
      s_dev = std::max(s_dev, std::abs(row.s_raw / row.s_dilated - double(cfg.dilation)) /
                                  double(cfg.dilation));

    JsonValue::Object root;
    root["config"] = condnum_config_json(cfg);
    root["median_kappa_raw_init"] = rep.median_kappa_raw_init;
    root["median_kappa_dilated_init"] = rep.median_kappa_dilated_init;
    root["median_kappa_raw_final"] = rep.median_kappa_raw_final;
    root["median_kappa_dilated_final"] = rep.median_kappa_dilated_final;
    root["dilated_below_raw_init"] = rep.median_kappa_dilated_init < rep.median_kappa_raw_init;
    root["dilated_below_raw_final"] = rep.median_kappa_dilated_final < rep.median_kappa_raw_final;
    root["s_ratio_max_rel_deviation"] = s_dev;
    root["schema_version"] = std::int64_t(1);
    const std::string text = JsonValue(std::move(root)).dump();
    save_bytes(fs::path(a.out) / "report.json", std::vector<std::uint8_t>(text.begin(), text.end()));

    std::string csv =
        "seed,s_raw,s_dilated,kappa_raw_init,kappa_dilated_init,kappa_raw_final,"
        "kappa_dilated_final,lambda_raw_init,lambda_dilated_init,lambda_raw_final,"
        "lambda_dilated_final,rank_raw_init,rank_dilated_init,rank_raw_final,rank_dilated_final,"
        "params,dead_params,norm_product_init,norm_product_raw_final,norm_product_dilated_final,"
        "bound_raw_init,bound_dilated_init,bound_raw_final,bound_dilated_final,"
        "loss_raw_first,loss_raw_last,loss_dilated_first,loss_dilated_last\n";
    char line[1024];
    for (const auto& r : rep.rows) {
      std::snprintf(
          line, sizeof line,
          "%" PRIu64
          ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
          "%lld,%lld,%lld,%lld,%lld,%lld,"
          "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
          r.seed, r.s_raw, r.s_dilated, r.kappa_raw_init, r.kappa_dilated_init, r.kappa_raw_final,
          r.kappa_dilated_final, r.lambda_raw_init, r.lambda_dilated_init, r.lambda_raw_final,
          r.lambda_dilated_final, static_cast<long long>(r.rank_raw_init),
          static_cast<long long>(r.rank_dilated_init), static_cast<long long>(r.rank_raw_final),
          static_cast<long long>(r.rank_dilated_final), static_cast<long long>(r.params),
          static_cast<long long>(r.dead_params), r.norm_product_init, r.norm_product_raw_final,
          r.norm_product_dilated_final, r.bound_raw_init, r.bound_dilated_init, r.bound_raw_final,
          r.bound_dilated_final, r.loss_raw_first, r.loss_raw_last, r.loss_dilated_first,
          r.loss_dilated_last);
      csv += line;
    }
    save_bytes(fs::path(a.out) / "seeds.csv", std::vector<std::uint8_t>(csv.begin(), csv.end()));

    std::printf("median kappa  raw init %.3e  dilated init %.3e  raw final %.3e  dilated final %.3e\n",
                rep.median_kappa_raw_init, rep.median_kappa_dilated_init,
                rep.median_kappa_raw_final, rep.median_kappa_dilated_final);
    std::printf("dilated median below raw  init %s  final %s\n",
                rep.median_kappa_dilated_init < rep.median_kappa_raw_init ? "yes" : "no",
                rep.median_kappa_dilated_final < rep.median_kappa_raw_final ? "yes" : "no");
    std::printf("S ratio max relative deviation from %d: %.3e\n", cfg.dilation, s_dev);
    return exit_ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deforge condnum: %s\n", e.what());
    return exit_runtime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deforge: first-principles-consistent differential-equation datasets"};
  app.set_version_flag("--version", std::string("deforge ") + version_string);
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate", "generate a dataset from a config file");
  cmd_gen->add_option("--config", gen.config, "run configuration JSON")->required();
  cmd_gen->add_option("--count", gen.count, "override sample count");
  cmd_gen->add_option("--seed", gen.seed, "override master seed");
  cmd_gen->add_option("--out", gen.out, "override output directory");
  cmd_gen->add_option("--workers", gen.workers, "override worker count (0 = hardware)");

  VerifyArgs ver;
  auto* cmd_ver = app.add_subcommand("verify", "re-derive and check every sample of a dataset");
  cmd_ver->add_option("--dataset", ver.dataset, "dataset root directory")->required();
  cmd_ver->add_option("--tol", ver.tol, "recorded-residual drift tolerance");
  cmd_ver->add_option("--report", ver.report, "write the JSON report here instead of stdout");

  DilateArgs dil;
  auto* cmd_dil = app.add_subcommand("dilate", "apply the scale dilation to a field blob");
  cmd_dil->add_option("--in", dil.in, "input blob")->required();
  cmd_dil->add_option("--out", dil.out, "output blob")->required();
  cmd_dil->add_option("--factor", dil.factor, "dilation factor")->required();
  cmd_dil->add_flag("--inverse", dil.inverse, "apply the inverse re-indexing");
  cmd_dil->add_option("--dims", dil.dims, "spatial dimensions in the blob (default 2)");

  SpectrumArgs spc;
  auto* cmd_spc = app.add_subcommand("spectrum", "radial energy spectrum of a field blob as CSV");
  cmd_spc->add_option("--in", spc.in, "input blob")->required();
  cmd_spc->add_option("--out", spc.out, "output CSV (default stdout)");
  cmd_spc->add_option("--dims", spc.dims, "spatial dimensions in the blob (default 2)");
  cmd_spc->add_option("--time", spc.time, "time slab to analyze (default 0)");

  CondnumArgs cnd;
  auto* cmd_cnd = app.add_subcommand("condnum", "Gauss-Newton conditioning study");
  cmd_cnd->add_option("--config", cnd.config, "study configuration JSON (defaults when omitted)");
  cmd_cnd->add_option("--out", cnd.out, "output directory for report.json and seeds.csv")
      ->required();
  cmd_cnd->add_option("--workers", cnd.workers, "override worker count (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  if (cmd_gen->parsed()) return run_generate(gen);
  if (cmd_ver->parsed()) return run_verify(ver);
  if (cmd_dil->parsed()) return run_dilate(dil);
  if (cmd_spc->parsed()) return run_spectrum(spc);
  if (cmd_cnd->parsed()) return run_condnum(cnd);
  return exit_usage;
}
