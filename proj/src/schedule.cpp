// SPDX-License-Identifier: Apache-2.0
#include "patchflow/schedule.hpp"

#include <cmath>
#include <sstream>

#include "patchflow/errors.hpp"
#include "patchflow/textio.hpp"

namespace patchflow {

PatchSchedule make_schedule(const std::vector<double>& boundaries,
                            const std::vector<std::pair<int, int>>& patch_sizes,
                            const std::vector<double>& cfg_scales, int latent_size) {
  require(!patch_sizes.empty(), ErrorKind::Config, "schedule needs at least one stage");
  require(boundaries.size() + 1 == patch_sizes.size(), ErrorKind::Config,
          "schedule: " + std::to_string(patch_sizes.size()) + " stages need " +
              std::to_string(patch_sizes.size() - 1) + " boundaries, got " +
              std::to_string(boundaries.size()));
  require(cfg_scales.size() == patch_sizes.size(), ErrorKind::Config,
          "schedule: one cfg scale per stage");
  require(latent_size > 0, ErrorKind::Config, "schedule: latent size must be positive");

  double prev = 0.0;
  for (double b : boundaries) {
    require(b > prev && b < 1.0, ErrorKind::Config,
            "schedule boundaries must be strictly increasing inside (0,1)");
    prev = b;
  }

  PatchSchedule sched;
  sched.latent_size = latent_size;
  int prev_area = 0;
  for (std::size_t s = 0; s < patch_sizes.size(); ++s) {
    Stage st;
    st.t_lo = s == 0 ? 0.0 : boundaries[s - 1];
    st.t_hi = s + 1 == patch_sizes.size() ? 1.0 : boundaries[s];
    st.patch_h = patch_sizes[s].first;
    st.patch_w = patch_sizes[s].second;
    st.cfg_scale = cfg_scales[s];
    require(st.patch_h > 0 && st.patch_w > 0, ErrorKind::Config, "patch dims must be positive");
    require(latent_size % st.patch_h == 0 && latent_size % st.patch_w == 0, ErrorKind::Config,
            "patch size " + std::to_string(st.patch_h) + "x" + std::to_string(st.patch_w) +
                " does not divide latent size " + std::to_string(latent_size));
    require(st.cfg_scale >= 0.0, ErrorKind::Config, "cfg scale must be non-negative");
    int area = st.patch_h * st.patch_w;
    if (s > 0)
      require(area <= prev_area, ErrorKind::Config,
              "patch area must not increase toward noisier stages (stage " + std::to_string(s) +
                  ")");
    prev_area = area;
    sched.stages.push_back(st);
  }
  return sched;
}

int stage_of(double t, const PatchSchedule& schedule) {
  require(t >= 0.0 && t <= 1.0, ErrorKind::Domain,
          "timestep " + std::to_string(t) + " outside [0,1]");
  int last = schedule.num_stages() - 1;
  for (int s = 0; s < last; ++s) {
    if (t < schedule.stage(s).t_hi) return s;
  }
  return last;
}

std::string schedule_patch_str(const PatchSchedule& s) {
  std::ostringstream os;
  for (int i = 0; i < s.num_stages(); ++i) {
    if (i) os << ' ';
    os << s.stage(i).patch_h << 'x' << s.stage(i).patch_w;
  }
  return os.str();
}

std::string schedule_boundary_str(const PatchSchedule& s) {
  std::ostringstream os;
  for (int i = 1; i < s.num_stages(); ++i) {
    if (i > 1) os << ' ';
    os << s.stage(i).t_lo;
  }
  return os.str();
}

std::string schedule_cfg_str(const PatchSchedule& s) {
  std::ostringstream os;
  for (int i = 0; i < s.num_stages(); ++i) {
    if (i) os << ' ';
    os << s.stage(i).cfg_scale;
  }
  return os.str();
}

PatchSchedule schedule_from_strings(const std::string& boundaries, const std::string& patch,
                                    const std::string& cfg, int latent_size) {
  std::vector<double> bs;
  for (const std::string& tok : split_ws(boundaries)) bs.push_back(std::stod(tok));
  std::vector<std::pair<int, int>> sizes;
  for (const std::string& tok : split_ws(patch)) {
    std::size_t x = tok.find('x');
    require(x != std::string::npos && x > 0 && x + 1 < tok.size(), ErrorKind::Config,
            "bad patch size '" + tok + "' (expected HxW)");
    sizes.emplace_back(std::stoi(tok.substr(0, x)), std::stoi(tok.substr(x + 1)));
  }
  std::vector<double> cfgs;
  for (const std::string& tok : split_ws(cfg)) cfgs.push_back(std::stod(tok));
  if (cfgs.empty()) cfgs.assign(sizes.size(), 1.0);
  return make_schedule(bs, sizes, cfgs, latent_size);
}

bool same_schedule(const PatchSchedule& a, const PatchSchedule& b) {
  if (a.num_stages() != b.num_stages() || a.latent_size != b.latent_size) return false;
  for (int i = 0; i < a.num_stages(); ++i) {
    const Stage &x = a.stage(i), &y = b.stage(i);
    if (x.patch_h != y.patch_h || x.patch_w != y.patch_w) return false;
    if (std::abs(x.t_lo - y.t_lo) > 1e-12 || std::abs(x.t_hi - y.t_hi) > 1e-12) return false;
  }
  return true;
}

}  // namespace patchflow
