// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "patchflow/flops.hpp"
#include "patchflow/sampler.hpp"
#include "patchflow/textio.hpp"

namespace patchflow {

struct BenchResult {
  double staged_ms_median = 0.0;
  double uniform_ms_median = 0.0;
  double speedup = 0.0;
  int steps = 0;
  int repeats = 0;
  int threads = 1;  // kernels are single-threaded; reported for the record
  double predicted_percent = 0.0;  // analyzer's cost ratio for context
};

// Same weights, single-stage schedule built from the finest stage.
template <typename S>
VelocityModel<S> uniform_view(VelocityModel<S>& model) {
  VelocityModel<S> u = model;
  const Stage& fine = model.schedule.stage(model.schedule.fine_stage());
  u.schedule = make_schedule({}, {{fine.patch_h, fine.patch_w}}, {fine.cfg_scale},
                             model.schedule.latent_size);
  u.projections = {model.projections[static_cast<std::size_t>(model.schedule.fine_stage())]};
  if (model.config.use_level_embed) {
    // the single stage indexes row 0, so it must hold the fine stage's row
    int d = model.config.d;
    int fine = model.schedule.fine_stage();
    std::vector<S> row(model.level_table.data().begin() + fine * d,
                       model.level_table.data().begin() + (fine + 1) * d);
    u.level_table = Tensor<S>::from({1, d}, std::move(row));
  }
  return u;
}

// Median wall-clock per sampled image for the staged schedule against the
// uniform single-stage baseline on identical weights. One warmup image per
// model; both runs force two guidance evaluations per step so the
// comparison counts the same number of network calls.
template <typename S>
BenchResult bench_wallclock(VelocityModel<S>& model, int steps, int repeats,
                            std::uint64_t seed = 7) {
  require(repeats >= 5, ErrorKind::Config, "bench: need at least 5 repeats");
  VelocityModel<S> uniform = uniform_view(model);

  auto run_once = [&](VelocityModel<S>& m, std::uint64_t s) {
    SampleConfig cfg;
    cfg.steps = steps;
    cfg.class_id = 0;
    cfg.seed = s;
    cfg.disable_single_eval_shortcut = true;
    auto t0 = std::chrono::steady_clock::now();
    euler_sample(m, cfg);
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  run_once(model, seed);  // warmup
  run_once(uniform, seed);

  std::vector<double> staged, base;
  for (int i = 0; i < repeats; ++i) staged.push_back(run_once(model, seed + 1 + i));
  for (int i = 0; i < repeats; ++i) base.push_back(run_once(uniform, seed + 1 + i));

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  BenchResult r;
  r.staged_ms_median = median(staged);
  r.uniform_ms_median = median(base);
  r.speedup = r.uniform_ms_median / r.staged_ms_median;
  r.steps = steps;
  r.repeats = repeats;
  r.predicted_percent = schedule_ratio(model.schedule, model.config);
  return r;
}

inline std::string format_bench_result(const BenchResult& r) {
  std::string s;
  s += "steps " + std::to_string(r.steps) + "\n";
  s += "repeats " + std::to_string(r.repeats) + "\n";
  s += "threads " + std::to_string(r.threads) + "\n";
  s += "staged_ms_median " + format_g9(r.staged_ms_median) + "\n";
  s += "uniform_ms_median " + format_g9(r.uniform_ms_median) + "\n";
  s += "speedup " + format_g9(r.speedup) + "\n";
  s += "predicted_flops_percent " + format_g9(r.predicted_percent) + "\n";
  return s;
}

}  // namespace patchflow
