// SPDX-License-Identifier: Apache-2.0
//
// Closed-form compute accounting. Counts are MACs (multiply-accumulates)
// per network evaluation under a documented convention:
//   per block:   QKV + output projections 4*L*d^2, MLP 2*mlp_ratio*L*d^2,
//                attention scores + weighted values 2*L^2*d
//   projections: Patchify + Unpatchify 2*I^2*C*d (identical for every stage)
//   conditioning: timestep MLP 256*d + d^2, per-block adaLN 6*d^2 each,
//                final-head modulation 2*d^2
// Softmax, normalization and activation costs are ignored. Ratios are
// independent of any constant factor on these counts, so the usual 2x
// MAC-to-FLOP doubling does not change them.

#pragma once

#include <string>
#include <vector>

#include "patchflow/model_config.hpp"
#include "patchflow/schedule.hpp"

namespace patchflow {

// MACs of one transformer block on L tokens of width d.
long long block_macs(long long tokens, long long d, int mlp_ratio = 4);

// MACs of one full network evaluation on `tokens` tokens.
long long model_macs(const ModelConfig& config, int tokens);

// Fraction of model_macs spent inside the blocks, in percent.
double block_share_percent(const ModelConfig& config, int tokens);

// Interval-length-weighted cost of one evaluation under the schedule,
// relative to an evaluation at the finest stage, in percent.
double schedule_ratio(const PatchSchedule& schedule, const ModelConfig& config);

struct StageFlops {
  int stage = 0;
  int patch_h = 0, patch_w = 0;
  int tokens = 0;
  long long macs_per_eval = 0;
  double weight = 0.0;  // interval length
  int steps = 0;        // steps landing in this stage on the uniform K-grid
};

struct FlopsReport {
  std::vector<StageFlops> stages;
  long long fine_macs_per_eval = 0;
  long long projection_macs = 0;  // identical across stages
  double ratio_percent = 0.0;
  double block_share_fine_percent = 0.0;
  int sample_steps = 0;
  long long schedule_step_macs = 0;  // sum over the K-step grid, one eval per step
  long long uniform_step_macs = 0;
  bool high_resolution_caveat = false;
};

FlopsReport analyze_flops(const ModelConfig& config, const PatchSchedule& schedule,
                          int sample_steps);

// Machine-parsable key-value rendering, one "key value" pair per line.
std::string format_flops_report(const ModelConfig& config, const PatchSchedule& schedule,
                                const FlopsReport& report);

}  // namespace patchflow
