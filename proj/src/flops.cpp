// SPDX-License-Identifier: Apache-2.0
#include "patchflow/flops.hpp"

#include <sstream>

#include "patchflow/errors.hpp"
#include "patchflow/textio.hpp"

namespace patchflow {

long long block_macs(long long tokens, long long d, int mlp_ratio) {
  require(tokens > 0 && d > 0, ErrorKind::Domain, "block_macs: L and d must be positive");
  long long linear = (4 + 2 * static_cast<long long>(mlp_ratio)) * tokens * d * d;
  long long attention = 2 * tokens * tokens * d;
  return linear + attention;
}

namespace {

long long conditioning_macs(const ModelConfig& c) {
  long long d = c.d;
  long long t_mlp = 256 * d + d * d;
  long long adaln = static_cast<long long>(c.depth) * 6 * d * d;
  long long head = 2 * d * d;
  return t_mlp + adaln + head;
}

long long projection_macs(const ModelConfig& c) {
  long long I = c.latent_size;
  return 2 * I * I * c.channels * c.d;
}

}  // namespace

long long model_macs(const ModelConfig& config, int tokens) {
  long long blocks = static_cast<long long>(config.depth) *
                     block_macs(tokens, config.d, config.mlp_ratio);
  return blocks + projection_macs(config) + conditioning_macs(config);
}

double block_share_percent(const ModelConfig& config, int tokens) {
  long long blocks = static_cast<long long>(config.depth) *
                     block_macs(tokens, config.d, config.mlp_ratio);
  return 100.0 * static_cast<double>(blocks) / static_cast<double>(model_macs(config, tokens));
}

double schedule_ratio(const PatchSchedule& schedule, const ModelConfig& config) {
  double weighted = 0.0;
  for (int s = 0; s < schedule.num_stages(); ++s) {
    const Stage& st = schedule.stage(s);
    double weight = st.t_hi - st.t_lo;
    weighted += weight * static_cast<double>(model_macs(config, schedule.tokens(s)));
  }
  double fine = static_cast<double>(model_macs(config, schedule.max_tokens()));
  return 100.0 * weighted / fine;
}

FlopsReport analyze_flops(const ModelConfig& config, const PatchSchedule& schedule,
                          int sample_steps) {
  require(sample_steps >= 1, ErrorKind::Config, "analyze: need at least one sampling step");
  require(schedule.latent_size == config.latent_size, ErrorKind::Config,
          "analyze: schedule latent size does not match the model config");
  FlopsReport r;
  r.sample_steps = sample_steps;
  r.fine_macs_per_eval = model_macs(config, schedule.max_tokens());
  r.projection_macs = 2LL * config.latent_size * config.latent_size * config.channels * config.d;
  r.ratio_percent = schedule_ratio(schedule, config);
  r.block_share_fine_percent = block_share_percent(config, schedule.max_tokens());
  r.high_resolution_caveat = config.latent_size >= 64;

  std::vector<int> step_counts(static_cast<std::size_t>(schedule.num_stages()), 0);
  for (int k = 0; k < sample_steps; ++k) {
    double t = static_cast<double>(k) / static_cast<double>(sample_steps);
    step_counts[static_cast<std::size_t>(stage_of(t, schedule))] += 1;
  }

  for (int s = 0; s < schedule.num_stages(); ++s) {
    const Stage& st = schedule.stage(s);
    StageFlops f;
    f.stage = s;
    f.patch_h = st.patch_h;
    f.patch_w = st.patch_w;
    f.tokens = schedule.tokens(s);
    f.macs_per_eval = model_macs(config, f.tokens);
    f.weight = st.t_hi - st.t_lo;
    f.steps = step_counts[static_cast<std::size_t>(s)];
    r.schedule_step_macs += static_cast<long long>(f.steps) * f.macs_per_eval;
    r.stages.push_back(f);
  }
  r.uniform_step_macs = static_cast<long long>(sample_steps) * r.fine_macs_per_eval;
  return r;
}

std::string format_flops_report(const ModelConfig& config, const PatchSchedule& schedule,
                                const FlopsReport& r) {
  std::ostringstream os;
  os << "config.d " << config.d << "\n";
  os << "config.depth " << config.depth << "\n";
  os << "config.heads " << config.heads << "\n";
  os << "config.mlp_ratio " << config.mlp_ratio << "\n";
  os << "config.channels " << config.channels << "\n";
  os << "config.latent " << config.latent_size << "\n";
  os << "schedule.stages " << schedule.num_stages() << "\n";
  os << "schedule.patch " << schedule_patch_str(schedule) << "\n";
  os << "schedule.boundaries " << schedule_boundary_str(schedule) << "\n";
  for (const StageFlops& f : r.stages) {
    std::string p = "stage." + std::to_string(f.stage) + ".";
    os << p << "patch " << f.patch_h << "x" << f.patch_w << "\n";
    os << p << "tokens " << f.tokens << "\n";
    os << p << "macs_per_eval " << f.macs_per_eval << "\n";
    os << p << "weight " << format_g9(f.weight) << "\n";
    os << p << "steps " << f.steps << "\n";
  }
  os << "projection_macs_per_eval " << r.projection_macs << "\n";
  os << "uniform.macs_per_eval " << r.fine_macs_per_eval << "\n";
  os << "block_share_percent " << format_g9(r.block_share_fine_percent) << "\n";
  os << "sample_steps " << r.sample_steps << "\n";
  os << "schedule_step_macs " << r.schedule_step_macs << "\n";
  os << "uniform_step_macs " << r.uniform_step_macs << "\n";
  os << "testing_flops_percent " << format_g9(r.ratio_percent) << "\n";
  os << "convention MACs; attention 2*L^2*d, qkv+proj 4*L*d^2, mlp 2*ratio*L*d^2; "
        "norm/softmax ignored; ratios invariant to constant factors\n";
  if (r.high_resolution_caveat)
    os << "caveat high-resolution counting convention unverified above latent 64; "
          "tolerance widened to +-3 points\n";
  return os.str();
}

}  // namespace patchflow
