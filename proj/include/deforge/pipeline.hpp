#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "deforge/balance.hpp"
#include "deforge/dataio.hpp"
#include "deforge/runconfig.hpp"
#include "deforge/sdo.hpp"

namespace deforge {

// Stream tag for per-sample seed derivation: each sample draws from
// mix_seed(master_seed, sample_index, sample_stream), so the schedule and the
// worker count never influence the bytes.
inline constexpr std::uint64_t sample_stream = 23;

struct SampleResult {
  Index index = 0;
  ResidualPair residuals;
  DilationReport dilation;
};

struct GenerateReport {
  Index count = 0;
  double same_op_max = 0;
  double cross_op_max = 0;
  double wall_seconds = 0;
  std::vector<SampleResult> samples;

  double samples_per_second() const {
    return wall_seconds > 0 ? double(count) / wall_seconds : 0.0;
  }
};

namespace detail {

// Prescribes the PDE solution field. With a dilation factor the synthesized
// integer modes are scaled onto the divisible sublattice first, so the raw
// field is band-limited high-frequency content whose dilation is exact.
inline Field pde_solution(const RunConfig& cfg, Rng& rng, DilationReport& rep) {
  Grid g = grid_2d<double>(cfg.points, cfg.points, cfg.length, cfg.length);
  if (cfg.family != Family::navier_cauchy) g = with_time(g, cfg.time_points, cfg.duration);
  const Polarization pol = cfg.family == Family::navier_stokes ? Polarization::transverse
                                                               : Polarization::mixed;
  auto df = synth_modes(g, cfg.synth, rng, pol);
  if (cfg.dilation == 1) {
    rep = DilationReport{};
    return std::move(df.field);
  }
  for (auto& m : df.modes)
    for (int j = 0; j < g.dims; ++j) {
      m.k[std::size_t(j)] *= cfg.dilation;
      if (2 * std::abs(m.k[std::size_t(j)]) >= g.points[j])
        throw std::runtime_error("dilation: raw mode crosses Nyquist");
    }
  const Field raw = evaluate_modes(df.modes, g, "velocity");
  rep = dilation_report(raw, cfg.dilation);
  return dilate(raw, cfg.dilation);
}

inline TimeSeries prescribed_path(const RunConfig& cfg, Rng& rng) {
  const double dt = cfg.horizon / double(cfg.steps - 1);
  return smooth_trajectory(cfg.trajectory, rng).sample(cfg.steps, dt);
}

}  // namespace detail

// Builds one fully balanced sample from its derived seed. The dilation report
// describes the raw-to-emitted re-indexing (factor 1 when dilation is off).
inline Sample make_sample(const RunConfig& cfg, std::uint64_t sample_seed, DilationReport& rep) {
  Rng rng(sample_seed);
  rep = DilationReport{};
  switch (cfg.family) {
    case Family::navier_stokes:
      return balance_ns(detail::pde_solution(cfg, rng, rep), cfg.ns);
    case Family::navier_cauchy:
      return balance_snc(detail::pde_solution(cfg, rng, rep), cfg.snc);
    case Family::elastic_wave:
      return balance_wave(detail::pde_solution(cfg, rng, rep), cfg.wave);
    case Family::bouc_wen:
      return balance_boucwen(detail::prescribed_path(cfg, rng), cfg.bouc_wen);
    case Family::lorenz:
      return balance_lorenz(detail::prescribed_path(cfg, rng), cfg.lorenz);
  }
  throw std::logic_error("make_sample: unhandled family");
}

// Generates cfg.count samples under out_root with a sample-level worker pool.
// Workers only touch their own sample directory; the index is written last by
// the coordinator. Any failure stops the pool and is rethrown with the sample
// index attached.
inline GenerateReport generate_dataset(const RunConfig& cfg,
                                       const std::filesystem::path& out_root) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_root);

  GenerateReport report;
  report.count = cfg.count;
  report.samples.resize(std::size_t(cfg.count));

  std::atomic<Index> next{0};
  std::mutex gate;
  Index failed_index = -1;
  std::string failure;

  auto run = [&] {
    for (;;) {
      const Index i = next.fetch_add(1);
      if (i >= cfg.count) return;
      try {
        SampleResult r;
        r.index = i;
        const std::uint64_t seed = mix_seed(cfg.seed, std::uint64_t(i), sample_stream);
        const Sample sample = make_sample(cfg, seed, r.dilation);
        if (cfg.dilation > 1 && cfg.require_compatible && !r.dilation.compatible)
          throw std::runtime_error("dilation dropped prescribed modes");
        r.residuals = residual(sample);
        if (!r.residuals.same_op.pass())
          throw std::runtime_error("same-operator residual exceeds tolerance");
        if (!r.residuals.cross_op.pass())
          throw std::runtime_error("cross-operator residual exceeds tolerance");

        SampleMeta meta;
        meta.seed = seed;
        if (cfg.dilation > 1) meta.dilation = cfg.dilation;
        meta.same_op_max_rel = r.residuals.same_op.max_rel;
        meta.cross_op_max_rel = r.residuals.cross_op.max_rel;
        write_sample(out_root / sample_dir_name(i), sample, meta);
        report.samples[std::size_t(i)] = std::move(r);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(gate);
        if (failed_index < 0 || i < failed_index) {
          failed_index = i;
          failure = "sample " + std::to_string(i) + ": " + e.what();
        }
        next.store(cfg.count);
        return;
      }
    }
  };

  int workers = cfg.workers > 0 ? cfg.workers : int(std::thread::hardware_concurrency());
  workers = int(std::min<Index>(std::max(workers, 1), std::max<Index>(cfg.count, 1)));
  if (cfg.count > 0) {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failed_index >= 0) throw std::runtime_error(failure);

  DatasetIndex index;
  index.master_seed = cfg.seed;
  index.config_echo = cfg.text;
  index.samples.reserve(std::size_t(cfg.count));
  for (Index i = 0; i < cfg.count; ++i) index.samples.push_back(sample_dir_name(i));
  write_dataset_index(out_root, index);

  for (const auto& r : report.samples) {
    report.same_op_max = std::max(report.same_op_max, r.residuals.same_op.max_rel);
    report.cross_op_max = std::max(report.cross_op_max, r.residuals.cross_op.max_rel);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace deforge
