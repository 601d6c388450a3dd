// SPDX-License-Identifier: Apache-2.0
//
// Flow-matching objective, stage-aware batch construction with sequence
// packing, the optimizer/EMA loop, and conversion of uniform-patch
// checkpoints to staged ones.

#pragma once

#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "patchflow/dataset.hpp"
#include "patchflow/flops.hpp"
#include "patchflow/model.hpp"
#include "patchflow/optim.hpp"
#include "patchflow/options.hpp"
#include "patchflow/packing.hpp"
#include "patchflow/textio.hpp"

namespace patchflow {

// Linear interpolant between noise x0 and data x1:
// x_t = t*x1 + (1-t)*x0, with constant path velocity u_t = x1 - x0.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> fm_interpolate(const Tensor<S>& x1, const Tensor<S>& x0,
                                               double t) {
  require(x1.shape() == x0.shape(), ErrorKind::Dimension,
          "fm_interpolate: endpoint shapes differ");
  require(t >= 0.0 && t <= 1.0, ErrorKind::Domain, "fm_interpolate: t outside [0,1]");
  std::vector<S> xt(static_cast<std::size_t>(x1.size()));
  std::vector<S> ut(xt.size());
  auto a = x1.data();
  auto b = x0.data();
  S ts = static_cast<S>(t);
  for (std::size_t i = 0; i < xt.size(); ++i) {
    xt[i] = ts * a[i] + (S(1) - ts) * b[i];
    ut[i] = a[i] - b[i];
  }
  Shape shape = x1.shape();
  return {Tensor<S>::from(shape, std::move(xt)), Tensor<S>::from(shape, std::move(ut))};
}

// Mean squared error over all elements (mean reduction).
template <typename S>
Tensor<S> fm_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  require(pred.shape() == target.shape(), ErrorKind::Dimension, "fm_loss: shape mismatch");
  Tensor<S> diff = sub(pred, target);
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

template <typename S>
struct TrainState {
  VelocityModel<S> model;
  std::vector<Tensor<S>> ema;  // aligned with model.named_parameters() order
  AdamW<S> opt;
  long step = 0;

  static TrainState init(const ModelConfig& config, const PatchSchedule& schedule,
                         const TrainConfig& tc, std::uint64_t init_seed) {
    TrainState st;
    Rng rng(init_seed);
    st.model = init_model<S>(config, schedule, rng);
    st.opt = AdamW<S>(tc.learning_rate, tc.weight_decay);
    for (auto& [name, p] : st.model.named_parameters()) st.ema.push_back(p->clone_detached());
    return st;
  }

  // A model whose tensors are the EMA weights (values shared, not copied).
  VelocityModel<S> ema_model() {
    VelocityModel<S> em = model;  // copies tensor handles and layout
    auto names = em.named_parameters();
    require(names.size() == ema.size(), ErrorKind::Contract, "ema list out of sync");
    for (std::size_t i = 0; i < names.size(); ++i) *names[i].second = ema[i];
    return em;
  }
};

// ---------------------------------------------------------------------------
// Batch construction
// ---------------------------------------------------------------------------

template <typename S>
struct TrainSample {
  Tensor<S> x_t, u_t;
  double t = 0.0;
  int class_id = 0;
  int stage = 0;
  int token_len = 0;
  int dataset_index = 0;
};

// Shuffled epoch order chopped into batch_size chunks; every index appears
// exactly once per epoch.
inline std::vector<std::vector<int>> build_epoch_batches(int dataset_size, int batch_size,
                                                         Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(dataset_size));
  for (int i = 0; i < dataset_size; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int at = 0; at < dataset_size; at += batch_size) {
    int n = std::min(batch_size, dataset_size - at);
    batches.emplace_back(order.begin() + at, order.begin() + at + n);
  }
  return batches;
}

// Draws t ~ U[0,1], Gaussian noise and the class-dropout coin for one
// dataset element, in a fixed consumption order for reproducibility.
template <typename S>
TrainSample<S> make_train_sample(const ToyDataset& data, int index, const PatchSchedule& schedule,
                                 const ModelConfig& config, double class_dropout, Rng& rng) {
  double t = rng.uniform();
  int class_id = data.labels[static_cast<std::size_t>(index)];
  if (class_dropout > 0.0 && rng.uniform() < class_dropout) class_id = config.null_class();
  Tensor<S> x1 = data.latent_as<S>(index);
  Tensor<S> x0 = Tensor<S>::zeros(x1.shape());
  rng.fill_normal(x0.mutable_data());
  auto [x_t, u_t] = fm_interpolate(x1, x0, t);
  TrainSample<S> s;
  s.x_t = std::move(x_t);
  s.u_t = std::move(u_t);
  s.t = t;
  s.class_id = class_id;
  s.stage = stage_of(t, schedule);
  s.token_len = schedule.tokens(s.stage);
  s.dataset_index = index;
  return s;
}

// ---------------------------------------------------------------------------
// One optimizer step
// ---------------------------------------------------------------------------

template <typename S>
struct StepResult {
  S loss = 0;
  long long macs = 0;  // fwd+bwd MACs of this step under the analyzer convention
};

// Packs the batch (first-fit-decreasing; optionally grouped by stage),
// forwards each pack with a block-diagonal mask, averages the per-sample
// flow-matching losses, and applies one AdamW + EMA update. Only stages
// present in the batch receive projection gradients.
template <typename S>
StepResult<S> train_step(TrainState<S>& st, const std::vector<TrainSample<S>>& batch,
                         const TrainConfig& tc) {
  require(!batch.empty(), ErrorKind::Contract, "train_step: empty batch");
  VelocityModel<S>& model = st.model;
  int budget = tc.token_budget > 0 ? tc.token_budget : model.schedule.max_tokens();

  std::vector<Pack> packs;
  if (tc.group_by_stage) {
    for (int s = 0; s < model.schedule.num_stages(); ++s) {
      std::vector<int> idx;
      std::vector<int> lens;
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch[i].stage == s) {
          idx.push_back(static_cast<int>(i));
          lens.push_back(batch[i].token_len);
        }
      for (Pack& p : pack_batch(lens, budget)) {
        for (int& mi : p.members) mi = idx[static_cast<std::size_t>(mi)];
        packs.push_back(std::move(p));
      }
    }
  } else {
    std::vector<int> lens;
    for (const TrainSample<S>& s : batch) lens.push_back(s.token_len);
    packs = pack_batch(lens, budget);
  }

  model.set_requires_grad(true);
  std::vector<Tensor<S>> sample_losses;
  long long macs = 0;
  for (const Pack& pack : packs) {
    std::vector<ForwardSlot<S>> slots;
    for (int mi : pack.members) {
      const TrainSample<S>& s = batch[static_cast<std::size_t>(mi)];
      slots.push_back({s.x_t, s.t, s.class_id});
      macs += 3 * model_macs(model.config, s.token_len);  // fwd + ~2x fwd for bwd
    }
    std::vector<Tensor<S>> velocities = forward_velocity_packed(model, slots);
    for (std::size_t k = 0; k < pack.members.size(); ++k) {
      const TrainSample<S>& s = batch[static_cast<std::size_t>(pack.members[k])];
      sample_losses.push_back(fm_loss(velocities[k], s.u_t));
    }
  }

  Tensor<S> total = sample_losses[0];
  for (std::size_t i = 1; i < sample_losses.size(); ++i) total = add(total, sample_losses[i]);
  Tensor<S> loss = scale(total, S(1) / static_cast<S>(sample_losses.size()));
  loss.backward();

  std::vector<Tensor<S>*> params;
  for (auto& [name, p] : model.named_parameters()) params.push_back(p);
  st.opt.step(params);
  ema_update(st.ema, params, static_cast<S>(tc.ema_decay));
  for (Tensor<S>* p : params) p->zero_grad();
  st.step += 1;

  return {loss.item(), macs};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <typename S>
struct TrainRun {
  std::vector<S> losses;
  long long macs = 0;
  double flops_percent_vs_uniform = 0.0;  // per-sample accounting, padding-free
};

// Runs tc.steps optimizer steps over shuffled epochs of the dataset and
// writes one "step <k> loss <v> macs <m>" line per step to `log`.
template <typename S>
TrainRun<S> train_model(TrainState<S>& st, const ToyDataset& data, const TrainConfig& tc,
                        std::ostream* log = nullptr) {
  tc.validate(st.model.schedule.max_tokens());
  require(data.size() > 0, ErrorKind::Config, "train: empty dataset");
  Rng rng(tc.seed);
  TrainRun<S> run;
  long remaining = tc.steps;
  while (remaining > 0) {
    for (const std::vector<int>& chunk : build_epoch_batches(data.size(), tc.batch_size, rng)) {
      std::vector<TrainSample<S>> batch;
      for (int idx : chunk)
        batch.push_back(make_train_sample<S>(data, idx, st.model.schedule, st.model.config,
                                             tc.class_dropout, rng));
      StepResult<S> res = train_step(st, batch, tc);
      run.losses.push_back(res.loss);
      run.macs += res.macs;
      if (log)
        (*log) << "step " << st.step << " loss " << format_g9(static_cast<double>(res.loss))
               << " macs " << res.macs << "\n";
      if (--remaining == 0) break;
    }
  }
  long long uniform =
      3 * model_macs(st.model.config, st.model.schedule.max_tokens()) *
      static_cast<long long>(run.losses.size()) * tc.batch_size;
  run.flops_percent_vs_uniform = 100.0 * static_cast<double>(run.macs) / static_cast<double>(uniform);
  if (log) (*log) << "train_flops_percent " << format_g9(run.flops_percent_vs_uniform) << "\n";
  return run;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion (uniform 2x2 -> staged)
// ---------------------------------------------------------------------------

// Copies blocks, conditioning embedders and final-head modulation verbatim,
// copies the 2x2 stage projections verbatim, and builds every coarser
// stage's projections by averaging/duplication from the pretrained pair.
// The level table (if enabled on the target) starts at zero.
template <typename S>
VelocityModel<S> convert_model(const VelocityModel<S>& src, const PatchSchedule& schedule,
                               bool use_level_embed) {
  require(src.schedule.single_stage(), ErrorKind::Conversion,
          "convert: source must be a single-stage model");
  require(src.schedule.stage(0).patch_h == 2 && src.schedule.stage(0).patch_w == 2,
          ErrorKind::Conversion, "convert: source patch size must be 2x2");
  require(schedule.latent_size == src.config.latent_size, ErrorKind::Conversion,
          "convert: schedule latent size does not match the model");

  VelocityModel<S> dst;
  dst.config = src.config;
  dst.config.use_level_embed = use_level_embed;
  dst.schedule = schedule;
  dst.t_w1 = src.t_w1.clone_detached();
  dst.t_b1 = src.t_b1.clone_detached();
  dst.t_w2 = src.t_w2.clone_detached();
  dst.t_b2 = src.t_b2.clone_detached();
  dst.class_table = src.class_table.clone_detached();
  if (use_level_embed) dst.level_table = Tensor<S>::zeros({schedule.num_stages(), src.config.d});
  for (const BlockParams<S>& b : src.blocks) {
    BlockParams<S> nb;
    nb.w_qkv = b.w_qkv.clone_detached();
    nb.b_qkv = b.b_qkv.clone_detached();
    nb.w_attn_out = b.w_attn_out.clone_detached();
    nb.b_attn_out = b.b_attn_out.clone_detached();
    nb.w_mlp1 = b.w_mlp1.clone_detached();
    nb.b_mlp1 = b.b_mlp1.clone_detached();
    nb.w_mlp2 = b.w_mlp2.clone_detached();
    nb.b_mlp2 = b.b_mlp2.clone_detached();
    nb.w_mod = b.w_mod.clone_detached();
    nb.b_mod = b.b_mod.clone_detached();
    dst.blocks.push_back(std::move(nb));
  }
  dst.head_w_mod = src.head_w_mod.clone_detached();
  dst.head_b_mod = src.head_b_mod.clone_detached();

  const StageProjection<S>& pre = src.projections[0];
  for (int s = 0; s < schedule.num_stages(); ++s) {
    const Stage& st = schedule.stage(s);
    if (st.patch_h == 2 && st.patch_w == 2) {
      StageProjection<S> p;
      p.w_in = pre.w_in.clone_detached();
      p.b_in = pre.b_in.clone_detached();
      p.w_out = pre.w_out.clone_detached();
      p.b_out = pre.b_out.clone_detached();
      dst.projections.push_back(std::move(p));
    } else {
      dst.projections.push_back(
          init_from_pretrained(pre, src.config.channels, st.patch_h, st.patch_w));
    }
  }
  return dst;
}

// Converts model and EMA weights; optimizer moments do not transfer across
// the changed parameter set and start fresh.
template <typename S>
TrainState<S> convert_train_state(TrainState<S>& src, const PatchSchedule& schedule,
                                  bool use_level_embed, const TrainConfig& tc) {
  TrainState<S> dst;
  dst.model = convert_model(src.model, schedule, use_level_embed);
  VelocityModel<S> src_ema = src.ema_model();
  VelocityModel<S> ema_conv = convert_model(src_ema, schedule, use_level_embed);
  for (auto& [name, p] : ema_conv.named_parameters()) dst.ema.push_back(p->clone_detached());
  dst.opt = AdamW<S>(tc.learning_rate, tc.weight_decay);
  dst.step = src.step;
  return dst;
}

}  // namespace patchflow
