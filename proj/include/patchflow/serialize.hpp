// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout on top of the tensor-bundle format:
//   meta: model.* and schedule.* (config snapshot), train.step, opt.lr,
//         opt.weight_decay
//   tensors: model.<param>, ema.<param>, opt.m.<param>, opt.v.<param>
//            (moments only for parameters that have been updated), and
//            opt.steps (i64, one per parameter).

#pragma once

#include <string>

#include "patchflow/checkpoint.hpp"
#include "patchflow/textio.hpp"
#include "patchflow/train.hpp"

namespace patchflow {

inline void write_model_meta(TensorBundle& b, const ModelConfig& m, const PatchSchedule& s) {
  b.set_meta("model.d", std::to_string(m.d));
  b.set_meta("model.depth", std::to_string(m.depth));
  b.set_meta("model.heads", std::to_string(m.heads));
  b.set_meta("model.mlp_ratio", std::to_string(m.mlp_ratio));
  b.set_meta("model.classes", std::to_string(m.num_classes));
  b.set_meta("model.channels", std::to_string(m.channels));
  b.set_meta("model.latent", std::to_string(m.latent_size));
  b.set_meta("model.level_embed", m.use_level_embed ? "1" : "0");
  b.set_meta("schedule.patch", schedule_patch_str(s));
  b.set_meta("schedule.boundaries", schedule_boundary_str(s));
  b.set_meta("schedule.cfg", schedule_cfg_str(s));
}

inline ModelConfig model_config_from_meta(const TensorBundle& b) {
  ModelConfig m;
  m.d = std::stoi(b.require_meta("model.d"));
  m.depth = std::stoi(b.require_meta("model.depth"));
  m.heads = std::stoi(b.require_meta("model.heads"));
  m.mlp_ratio = std::stoi(b.require_meta("model.mlp_ratio"));
  m.num_classes = std::stoi(b.require_meta("model.classes"));
  m.channels = std::stoi(b.require_meta("model.channels"));
  m.latent_size = std::stoi(b.require_meta("model.latent"));
  m.use_level_embed = b.require_meta("model.level_embed") == "1";
  m.validate();
  return m;
}

inline PatchSchedule schedule_from_meta(const TensorBundle& b) {
  ModelConfig m = model_config_from_meta(b);
  return schedule_from_strings(b.require_meta("schedule.boundaries"),
                               b.require_meta("schedule.patch"), b.require_meta("schedule.cfg"),
                               m.latent_size);
}

template <typename S>
TensorBundle train_state_to_bundle(TrainState<S>& st) {
  TensorBundle b;
  write_model_meta(b, st.model.config, st.model.schedule);
  b.set_meta("train.step", std::to_string(st.step));
  b.set_meta("opt.lr", format_g9(st.opt.lr()));

  auto params = st.model.named_parameters();
  for (auto& [name, p] : params) b.add_tensor("model." + name, to_raw(*p));
  require(st.ema.size() == params.size(), ErrorKind::Contract, "ema list out of sync");
  for (std::size_t i = 0; i < params.size(); ++i)
    b.add_tensor("ema." + params[i].first, to_raw(st.ema[i]));

  auto& m1 = st.opt.moments1();
  auto& m2 = st.opt.moments2();
  auto& steps = st.opt.step_counts();
  if (!m1.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m1[i].empty()) continue;
      Shape shape = params[i].second->shape();
      b.add_tensor("opt.m." + params[i].first, to_raw(Tensor<S>::from(shape, m1[i])));
      b.add_tensor("opt.v." + params[i].first, to_raw(Tensor<S>::from(shape, m2[i])));
    }
    std::vector<long long> sc(steps.begin(), steps.end());
    b.add_tensor("opt.steps", raw_from_i64(sc));
  }
  return b;
}

template <typename S>
TrainState<S> train_state_from_bundle(const TensorBundle& b, double lr_override = -1.0,
                                      double weight_decay = 0.0) {
  ModelConfig config = model_config_from_meta(b);
  PatchSchedule schedule = schedule_from_meta(b);

  TrainState<S> st;
  Rng rng(0);
  st.model = init_model<S>(config, schedule, rng);
  st.step = std::stol(b.require_meta("train.step"));
  double lr = lr_override > 0 ? lr_override : std::stod(b.require_meta("opt.lr"));
  st.opt = AdamW<S>(lr, weight_decay);

  auto params = st.model.named_parameters();
  for (auto& [name, p] : params) {
    const RawTensor* raw = b.find_tensor("model." + name);
    require(raw != nullptr, ErrorKind::Format, "checkpoint missing tensor 'model." + name + "'");
    Tensor<S> loaded = from_raw<S>(*raw, name);
    require(loaded.shape() == p->shape(), ErrorKind::Format,
            "tensor 'model." + name + "' has shape " + shape_str(loaded.shape()) +
                ", config expects " + shape_str(p->shape()));
    *p = loaded;
  }
  for (auto& [name, p] : params) {
    const RawTensor* raw = b.find_tensor("ema." + name);
    require(raw != nullptr, ErrorKind::Format, "checkpoint missing tensor 'ema." + name + "'");
    st.ema.push_back(from_raw<S>(*raw, name));
    require(st.ema.back().shape() == p->shape(), ErrorKind::Format,
            "tensor 'ema." + name + "' shape mismatch");
  }
  if (const RawTensor* sc = b.find_tensor("opt.steps")) {
    auto counts = i64_from_raw(*sc, "opt.steps");
    require(counts.size() == params.size(), ErrorKind::Format,
            "opt.steps length does not match parameter count");
    auto& m1 = st.opt.moments1();
    auto& m2 = st.opt.moments2();
    auto& steps = st.opt.step_counts();
    m1.resize(params.size());
    m2.resize(params.size());
    steps.assign(counts.begin(), counts.end());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const RawTensor* rm = b.find_tensor("opt.m." + params[i].first);
      const RawTensor* rv = b.find_tensor("opt.v." + params[i].first);
      if (!rm || !rv) continue;
      Tensor<S> tm = from_raw<S>(*rm, params[i].first);
      Tensor<S> tv = from_raw<S>(*rv, params[i].first);
      m1[i].assign(tm.data().begin(), tm.data().end());
      m2[i].assign(tv.data().begin(), tv.data().end());
    }
  }
  return st;
}

// Latent dumps reuse the bundle format: tensors "sample.<i>" plus optional
// per-step "traj.<i>.<k>" entries.
template <typename S>
void add_latent(TensorBundle& b, const std::string& name, const Tensor<S>& latent) {
  b.add_tensor(name, to_raw(latent));
}

}  // namespace patchflow
