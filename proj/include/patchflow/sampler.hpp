// SPDX-License-Identifier: Apache-2.0
//
// Renoising-free staged ODE sampling: explicit Euler on the learned
// velocity with a uniform step grid. The latent keeps its full (C, I, I)
// shape through every stage boundary; the only thing that changes between
// stages is which Patchify/Unpatchify pair the network uses and the
// guidance scale.

#pragma once

#include <vector>

#include "patchflow/model.hpp"
#include "patchflow/options.hpp"
#include "patchflow/rng.hpp"

namespace patchflow {

// Standard guidance combination v = v_uncond + w * (v_cond - v_uncond).
// w = 1 and w = 0 return the corresponding input unchanged.
template <typename S>
Tensor<S> cfg_velocity(const Tensor<S>& v_cond, const Tensor<S>& v_uncond, S w) {
  require(v_cond.shape() == v_uncond.shape(), ErrorKind::Dimension,
          "cfg_velocity: shape mismatch");
  if (w == S(1)) return v_cond;
  if (w == S(0)) return v_uncond;
  std::vector<S> v(static_cast<std::size_t>(v_cond.size()));
  auto c = v_cond.data();
  auto u = v_uncond.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = u[i] + w * (c[i] - u[i]);
  return Tensor<S>::from(v_cond.shape(), std::move(v));
}

struct StageStep {
  double t = 0.0;
  int stage = 0;
  double cfg_scale = 1.0;
};

// Per-step stage and guidance assignment on the uniform grid t_k = k/K,
// k = 0..K-1, without touching the model.
inline std::vector<StageStep> trace_stages(const PatchSchedule& schedule, int K) {
  require(K >= 1, ErrorKind::Config, "trace_stages: need at least one step");
  std::vector<StageStep> out;
  for (int k = 0; k < K; ++k) {
    double t = static_cast<double>(k) / static_cast<double>(K);
    int s = stage_of(t, schedule);
    out.push_back({t, s, schedule.stage(s).cfg_scale});
  }
  return out;
}

struct SampleStats {
  int model_evals = 0;
  int steps = 0;
};

// Integrates dx/dt = v(x, t) from seeded Gaussian noise at t = 0 to t = 1
// with K uniform Euler steps; the network is evaluated at the left endpoint
// of each step. Guidance runs both a conditional and a null-class branch
// through the same stage projections; a stage with w exactly 1 skips the
// null branch (the combination reduces to the conditional velocity).
template <typename S>
Tensor<S> euler_sample(VelocityModel<S>& model, const SampleConfig& cfg,
                       SampleStats* stats = nullptr,
                       std::vector<Tensor<S>>* trajectory = nullptr) {
  cfg.validate();
  const ModelConfig& mc = model.config;
  require(cfg.class_id >= 0 && cfg.class_id <= mc.num_classes, ErrorKind::Domain,
          "sample: class id out of range");

  Tensor<S> x = Tensor<S>::zeros({mc.channels, mc.latent_size, mc.latent_size});
  Rng rng(cfg.seed);
  rng.fill_normal(x.mutable_data());
  if (trajectory) trajectory->push_back(x.clone_detached());

  int K = cfg.steps;
  const S dt = S(1) / static_cast<S>(K);
  for (const StageStep& step : trace_stages(model.schedule, K)) {
    S w = static_cast<S>(step.cfg_scale);
    Tensor<S> v_cond = predict_velocity(model, x, step.t, cfg.class_id);
    if (stats) stats->model_evals += 1;
    Tensor<S> v;
    if (w == S(1) && !cfg.disable_single_eval_shortcut) {
      v = v_cond;
    } else {
      Tensor<S> v_uncond = predict_velocity(model, x, step.t, mc.null_class());
      if (stats) stats->model_evals += 1;
      v = cfg_velocity(v_cond, v_uncond, w);
    }
    require(v.shape() == x.shape(), ErrorKind::Dimension,
            "sample: velocity shape drifted from the latent shape");
    auto xd = x.mutable_data();
    auto vd = v.data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += dt * vd[i];
    if (stats) stats->steps += 1;
    if (trajectory) trajectory->push_back(x.clone_detached());
  }
  return x;
}

}  // namespace patchflow
