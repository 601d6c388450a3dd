// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

namespace patchflow {

// One timestep interval with its patch size and guidance scale. Intervals
// are half-open [t_lo, t_hi) except the last stage, which is closed at 1.
struct Stage {
  double t_lo = 0.0;
  double t_hi = 1.0;
  int patch_h = 2;
  int patch_w = 2;
  double cfg_scale = 1.0;
};

// Ordered stages partitioning [0, 1]. Earlier stages cover noisier
// timesteps and must not have smaller patches than later ones, so the token
// count never decreases toward t = 1.
struct PatchSchedule {
  std::vector<Stage> stages;
  int latent_size = 0;  // spatial size the patch dims were validated against

  int num_stages() const { return static_cast<int>(stages.size()); }
  const Stage& stage(int s) const { return stages[static_cast<std::size_t>(s)]; }
  bool single_stage() const { return stages.size() == 1; }

  // Token count of stage s for the validated latent size.
  int tokens(int s) const {
    const Stage& st = stages[static_cast<std::size_t>(s)];
    return (latent_size / st.patch_h) * (latent_size / st.patch_w);
  }
  int fine_stage() const { return num_stages() - 1; }
  int max_tokens() const { return tokens(fine_stage()); }
};

// Builds and validates a schedule from interior boundaries (strictly
// increasing, inside (0,1)), one patch size per stage and one CFG scale per
// stage. An empty boundary list yields the single-stage schedule of a
// uniform model.
PatchSchedule make_schedule(const std::vector<double>& boundaries,
                            const std::vector<std::pair<int, int>>& patch_sizes,
                            const std::vector<double>& cfg_scales, int latent_size);

// Index of the unique stage whose interval contains t; domain error outside
// [0, 1].
int stage_of(double t, const PatchSchedule& schedule);

// Round-trip text forms used by config files and checkpoint headers,
// e.g. "4x4 2x2" and "0.5" and "1.5 3.5".
std::string schedule_patch_str(const PatchSchedule& s);
std::string schedule_boundary_str(const PatchSchedule& s);
std::string schedule_cfg_str(const PatchSchedule& s);

// Inverse of the three formatters above. An empty cfg string defaults every
// stage to scale 1.
PatchSchedule schedule_from_strings(const std::string& boundaries, const std::string& patch,
                                    const std::string& cfg, int latent_size);

bool same_schedule(const PatchSchedule& a, const PatchSchedule& b);

}  // namespace patchflow
