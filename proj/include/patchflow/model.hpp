// SPDX-License-Identifier: Apache-2.0
//
// The shared velocity network: timestep/class/level conditioning, adaLN-Zero
// transformer blocks, and stage-dependent Patchify/Unpatchify around them.
// Block parameters are shared across all stages; each stage owns only its
// projection pair.

#pragma once

#include <cmath>
#include <functional>
#include <type_traits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchflow/model_config.hpp"
#include "patchflow/patching.hpp"
#include "patchflow/rng.hpp"
#include "patchflow/schedule.hpp"
#include "patchflow/tensor.hpp"

namespace patchflow {

inline constexpr int kTimeFreqDim = 256;  // sinusoidal timestep feature width
inline constexpr double kTimeScale = 1000.0;  // t in [0,1] is scaled before embedding
inline constexpr double kLayerNormEps = 1e-6;

template <typename S>
struct BlockParams {
  Tensor<S> w_qkv, b_qkv;          // [3d, d], [3d]
  Tensor<S> w_attn_out, b_attn_out;  // [d, d], [d]
  Tensor<S> w_mlp1, b_mlp1;        // [hidden, d], [hidden]
  Tensor<S> w_mlp2, b_mlp2;        // [d, hidden], [d]
  Tensor<S> w_mod, b_mod;          // [6d, d], [6d]; zero-init (adaLN-Zero)
};

template <typename S>
struct VelocityModel {
  ModelConfig config;
  PatchSchedule schedule;

  Tensor<S> t_w1, t_b1, t_w2, t_b2;  // timestep embedder MLP
  Tensor<S> class_table;             // [num_classes + 1, d]; last row is the null class
  Tensor<S> level_table;             // [num_stages, d] when use_level_embed
  std::vector<BlockParams<S>> blocks;
  Tensor<S> head_w_mod, head_b_mod;  // final-layer modulation [2d, d], [2d]; zero-init
  ProjectionSet<S> projections;      // one pair per stage

  std::vector<std::pair<std::string, Tensor<S>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    out.emplace_back("t_embed.w1", &t_w1);
    out.emplace_back("t_embed.b1", &t_b1);
    out.emplace_back("t_embed.w2", &t_w2);
    out.emplace_back("t_embed.b2", &t_b2);
    out.emplace_back("class_embed.table", &class_table);
    if (config.use_level_embed) out.emplace_back("level_embed.table", &level_table);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      std::string p = "blocks." + std::to_string(i) + ".";
      BlockParams<S>& b = blocks[i];
      out.emplace_back(p + "attn.w_qkv", &b.w_qkv);
      out.emplace_back(p + "attn.b_qkv", &b.b_qkv);
      out.emplace_back(p + "attn.w_out", &b.w_attn_out);
      out.emplace_back(p + "attn.b_out", &b.b_attn_out);
      out.emplace_back(p + "mlp.w1", &b.w_mlp1);
      out.emplace_back(p + "mlp.b1", &b.b_mlp1);
      out.emplace_back(p + "mlp.w2", &b.w_mlp2);
      out.emplace_back(p + "mlp.b2", &b.b_mlp2);
      out.emplace_back(p + "adaln.w", &b.w_mod);
      out.emplace_back(p + "adaln.b", &b.b_mod);
    }
    out.emplace_back("head.adaln.w", &head_w_mod);
    out.emplace_back("head.adaln.b", &head_b_mod);
    for (std::size_t s = 0; s < projections.size(); ++s) {
      std::string p = "proj." + std::to_string(s) + ".";
      StageProjection<S>& sp = projections[s];
      out.emplace_back(p + "w_in", &sp.w_in);
      out.emplace_back(p + "b_in", &sp.b_in);
      out.emplace_back(p + "w_out", &sp.w_out);
      out.emplace_back(p + "b_out", &sp.b_out);
    }
    return out;
  }

  void set_requires_grad(bool flag) {
    for (auto& [name, t] : named_parameters()) t->set_requires_grad(flag);
  }

  Tensor<S>* find_parameter(const std::string& name) {
    for (auto& [n, t] : named_parameters())
      if (n == name) return t;
    return nullptr;
  }
};

namespace detail {

template <typename S>
Tensor<S> xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  rng.fill_uniform(t.mutable_data(), -limit, limit);
  return t;
}

}  // namespace detail

// From-scratch initialization. Linear weights are Xavier-uniform, embedding
// tables N(0, 0.02), and everything adaLN-Zero demands starts at zero:
// per-block modulation, final-head modulation, and the output projections,
// so the whole network is the identity-to-zero map at step 0.
template <typename S>
VelocityModel<S> init_model(const ModelConfig& config, const PatchSchedule& schedule, Rng& rng) {
  config.validate();
  require(schedule.latent_size == config.latent_size, ErrorKind::Config,
          "schedule latent size does not match model config");
  VelocityModel<S> m;
  m.config = config;
  m.schedule = schedule;
  int d = config.d;

  m.t_w1 = detail::xavier_uniform<S>({d, kTimeFreqDim}, kTimeFreqDim, d, rng);
  m.t_b1 = Tensor<S>::zeros({d});
  m.t_w2 = detail::xavier_uniform<S>({d, d}, d, d, rng);
  m.t_b2 = Tensor<S>::zeros({d});
  m.class_table = Tensor<S>::zeros({config.num_classes + 1, d});
  rng.fill_normal(m.class_table.mutable_data(), 0.02);
  if (config.use_level_embed) m.level_table = Tensor<S>::zeros({schedule.num_stages(), d});

  int hidden = config.mlp_hidden();
  for (int i = 0; i < config.depth; ++i) {
    BlockParams<S> b;
    b.w_qkv = detail::xavier_uniform<S>({3 * d, d}, d, 3 * d, rng);
    b.b_qkv = Tensor<S>::zeros({3 * d});
    b.w_attn_out = detail::xavier_uniform<S>({d, d}, d, d, rng);
    b.b_attn_out = Tensor<S>::zeros({d});
    b.w_mlp1 = detail::xavier_uniform<S>({hidden, d}, d, hidden, rng);
    b.b_mlp1 = Tensor<S>::zeros({hidden});
    b.w_mlp2 = detail::xavier_uniform<S>({d, hidden}, hidden, d, rng);
    b.b_mlp2 = Tensor<S>::zeros({d});
    b.w_mod = Tensor<S>::zeros({6 * d, d});
    b.b_mod = Tensor<S>::zeros({6 * d});
    m.blocks.push_back(std::move(b));
  }
  m.head_w_mod = Tensor<S>::zeros({2 * d, d});
  m.head_b_mod = Tensor<S>::zeros({2 * d});

  for (int s = 0; s < schedule.num_stages(); ++s) {
    const Stage& st = schedule.stage(s);
    int ds = config.channels * st.patch_h * st.patch_w;
    StageProjection<S> p;
    p.w_in = detail::xavier_uniform<S>({d, ds}, ds, d, rng);
    p.b_in = Tensor<S>::zeros({d});
    p.w_out = Tensor<S>::zeros({ds, d});
    p.b_out = Tensor<S>::zeros({ds});
    m.projections.push_back(std::move(p));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

struct CondSpec {
  double t = 0.0;
  int class_id = 0;
  int stage = 0;
};

// Sinusoidal features of the (scaled) timestep, cos half then sin half.
template <typename S>
Tensor<S> timestep_features(const std::vector<double>& ts) {
  int half = kTimeFreqDim / 2;
  std::vector<S> v(ts.size() * kTimeFreqDim);
  for (std::size_t r = 0; r < ts.size(); ++r) {
    double t = ts[r] * kTimeScale;
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
      double a = t * freq;
      v[r * kTimeFreqDim + i] = static_cast<S>(std::cos(a));
      v[r * kTimeFreqDim + half + i] = static_cast<S>(std::sin(a));
    }
  }
  return Tensor<S>::from({static_cast<int>(ts.size()), kTimeFreqDim}, std::move(v));
}

// One conditioning row per spec: MLP(sin(t)) + class row + optional level
// row. Rows align with `specs`.
template <typename S>
Tensor<S> embed_condition_rows(VelocityModel<S>& m, const std::vector<CondSpec>& specs) {
  std::vector<double> ts;
  std::vector<int> class_ids, stages;
  for (const CondSpec& c : specs) {
    require(c.class_id >= 0 && c.class_id <= m.config.num_classes, ErrorKind::Domain,
            "class id " + std::to_string(c.class_id) + " outside [0," +
                std::to_string(m.config.num_classes) + "]");
    ts.push_back(c.t);
    class_ids.push_back(c.class_id);
    stages.push_back(c.stage);
  }
  Tensor<S> feat = timestep_features<S>(ts);
  Tensor<S> h = gelu(add_rowvec(matmul_nt(feat, m.t_w1), m.t_b1));
  Tensor<S> t_emb = add_rowvec(matmul_nt(h, m.t_w2), m.t_b2);
  Tensor<S> cond = add(t_emb, gather_rows(m.class_table, class_ids));
  if (m.config.use_level_embed) cond = add(cond, gather_rows(m.level_table, stages));
  return cond;
}

template <typename S>
Tensor<S> embed_condition(VelocityModel<S>& m, double t, int class_id, int stage) {
  return embed_condition_rows(m, {CondSpec{t, class_id, stage}});
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

// Additive attention mask for a packed layout: row r may attend to row q iff
// both belong to the same sample; padding rows attend only to themselves to
// keep softmax well defined. Blocked entries get a large negative logit.
template <typename S>
Tensor<S> build_attention_mask(const std::vector<int>& row_slot) {
  int T = static_cast<int>(row_slot.size());
  const S blocked = static_cast<S>(-1e9);
  std::vector<S> v(static_cast<std::size_t>(T) * T, blocked);
  for (int r = 0; r < T; ++r)
    for (int q = 0; q < T; ++q) {
      bool ok = (r == q) || (row_slot[static_cast<std::size_t>(r)] >= 0 &&
                             row_slot[static_cast<std::size_t>(r)] ==
                                 row_slot[static_cast<std::size_t>(q)]);
      if (ok) v[static_cast<std::size_t>(r) * T + q] = S(0);
    }
  return Tensor<S>::from({T, T}, std::move(v));
}

template <typename S>
Tensor<S> modulate(const Tensor<S>& x, const Tensor<S>& shift, const Tensor<S>& scl) {
  return add(mul(x, affine(scl, S(1), S(1))), shift);
}

template <typename S>
Tensor<S> self_attention(const Tensor<S>& x, const BlockParams<S>& p,
                         std::type_identity_t<const Tensor<S>*> attn_mask, int heads) {
  int d = x.dim(1);
  int dh = d / heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<S> qkv = add_rowvec(matmul_nt(x, p.w_qkv), p.b_qkv);
  std::vector<Tensor<S>> head_outs;
  for (int h = 0; h < heads; ++h) {
    Tensor<S> q = slice_cols(qkv, h * dh, dh);
    Tensor<S> k = slice_cols(qkv, d + h * dh, dh);
    Tensor<S> v = slice_cols(qkv, 2 * d + h * dh, dh);
    Tensor<S> scores = scale(matmul_nt(q, k), inv_sqrt);
    if (attn_mask) scores = add(scores, *attn_mask);
    head_outs.push_back(matmul(softmax(scores), v));
  }
  Tensor<S> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return add_rowvec(matmul_nt(merged, p.w_attn_out), p.b_attn_out);
}

// Pre-norm block with adaLN modulation: shift/scale/gate for the attention
// and MLP sublayers come from the conditioning rows; gates start at zero so
// a fresh block is the identity.
//
// `cond` holds one row per sample; `row_slot` maps every token row to its
// sample (-1 for padding, which receives zero modulation).
template <typename S>
Tensor<S> dit_block(const Tensor<S>& tokens, const Tensor<S>& cond,
                    const std::vector<int>& row_slot, const BlockParams<S>& p,
                    std::type_identity_t<const Tensor<S>*> attn_mask, const ModelConfig& config) {
  int d = config.d;
  require(tokens.dim(1) == d, ErrorKind::Dimension,
          "dit_block: token width " + std::to_string(tokens.dim(1)) + " != d");
  Tensor<S> ones = Tensor<S>::full({d}, S(1));
  Tensor<S> zeros = Tensor<S>::zeros({d});
  const S eps = static_cast<S>(kLayerNormEps);

  Tensor<S> mod = add_rowvec(matmul_nt(gelu(cond), p.w_mod), p.b_mod);
  Tensor<S> mod_rows = gather_rows(mod, row_slot);
  Tensor<S> shift_msa = slice_cols(mod_rows, 0, d);
  Tensor<S> scale_msa = slice_cols(mod_rows, d, d);
  Tensor<S> gate_msa = slice_cols(mod_rows, 2 * d, d);
  Tensor<S> shift_mlp = slice_cols(mod_rows, 3 * d, d);
  Tensor<S> scale_mlp = slice_cols(mod_rows, 4 * d, d);
  Tensor<S> gate_mlp = slice_cols(mod_rows, 5 * d, d);

  Tensor<S> h = modulate(layer_norm(tokens, ones, zeros, eps), shift_msa, scale_msa);
  Tensor<S> x = add(tokens, mul(gate_msa, self_attention(h, p, attn_mask, config.heads)));

  Tensor<S> h2 = modulate(layer_norm(x, ones, zeros, eps), shift_mlp, scale_mlp);
  Tensor<S> m1 = gelu(add_rowvec(matmul_nt(h2, p.w_mlp1), p.b_mlp1));
  Tensor<S> m2 = add_rowvec(matmul_nt(m1, p.w_mlp2), p.b_mlp2);
  return add(x, mul(gate_mlp, m2));
}

// Single-sample block entry: every token row shares one conditioning row.
template <typename S>
Tensor<S> dit_block(const Tensor<S>& tokens, const Tensor<S>& cond, const BlockParams<S>& p,
                    std::type_identity_t<const Tensor<S>*> attn_mask, const ModelConfig& config) {
  std::vector<int> row_slot(static_cast<std::size_t>(tokens.dim(0)), 0);
  return dit_block(tokens, cond, row_slot, p, attn_mask, config);
}

// ---------------------------------------------------------------------------
// Full velocity forward
// ---------------------------------------------------------------------------

template <typename S>
struct ForwardSlot {
  Tensor<S> latent;  // (C, H, W); H, W must be divisible by the stage patch
  double t = 0.0;
  int class_id = 0;
};

// Packed forward over one token sequence holding several samples. Each slot
// is patchified with the projections of its own stage (per stage_of(t)),
// rows are concatenated (plus zero padding up to pad_to when requested), and
// the block-diagonal mask keeps samples from attending to each other.
// Returns one velocity field per slot, each the shape of its input latent.
template <typename S>
std::vector<Tensor<S>> forward_velocity_packed(VelocityModel<S>& m,
                                               const std::vector<ForwardSlot<S>>& slots,
                                               int pad_to = 0) {
  require(!slots.empty(), ErrorKind::Contract, "forward: no slots");
  const ModelConfig& cfg = m.config;
  int d = cfg.d;

  std::vector<CondSpec> specs;
  std::vector<TokenSeq<S>> seqs;
  std::vector<Tensor<S>> token_parts;
  std::vector<int> row_slot;
  std::vector<int> row0(slots.size());
  int at = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const ForwardSlot<S>& slot = slots[i];
    int stage = stage_of(slot.t, m.schedule);
    specs.push_back({slot.t, slot.class_id, stage});
    TokenSeq<S> seq = patchify(slot.latent, stage, m.schedule, m.projections);
    seq.tokens = add(seq.tokens, pos_embed<S>(seq.grid_h, seq.grid_w, d));
    row0[i] = at;
    at += seq.tokens.dim(0);
    row_slot.insert(row_slot.end(), static_cast<std::size_t>(seq.tokens.dim(0)),
                    static_cast<int>(i));
    token_parts.push_back(seq.tokens);
    seqs.push_back(std::move(seq));
  }
  if (pad_to > at) {
    token_parts.push_back(Tensor<S>::zeros({pad_to - at, d}));
    row_slot.insert(row_slot.end(), static_cast<std::size_t>(pad_to - at), -1);
  }
  require(pad_to == 0 || pad_to >= at, ErrorKind::Config,
          "forward: pack rows exceed requested padding size");

  Tensor<S> tokens = token_parts.size() == 1 ? token_parts[0] : concat_rows(token_parts);
  Tensor<S> cond = embed_condition_rows(m, specs);

  std::optional<Tensor<S>> mask;
  if (slots.size() > 1 || pad_to > at) mask = build_attention_mask<S>(row_slot);
  const Tensor<S>* mask_ptr = mask ? &*mask : nullptr;

  for (const BlockParams<S>& b : m.blocks)
    tokens = dit_block(tokens, cond, row_slot, b, mask_ptr, cfg);

  // final layer: unmodulated-LN tokens shifted/scaled from the conditioning,
  // then the per-stage output projection
  Tensor<S> ones = Tensor<S>::full({d}, S(1));
  Tensor<S> zeros = Tensor<S>::zeros({d});
  Tensor<S> h = layer_norm(tokens, ones, zeros, static_cast<S>(kLayerNormEps));
  Tensor<S> mod = add_rowvec(matmul_nt(gelu(cond), m.head_w_mod), m.head_b_mod);
  Tensor<S> mod_rows = gather_rows(mod, row_slot);
  h = modulate(h, slice_cols(mod_rows, 0, d), slice_cols(mod_rows, d, d));

  std::vector<Tensor<S>> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const TokenSeq<S>& seq = seqs[i];
    int L = seq.grid_h * seq.grid_w;
    Tensor<S> rows = slice_rows(h, row0[i], L);
    TokenSeq<S> out_seq{rows, seq.grid_h, seq.grid_w, seq.stage};
    out.push_back(unpatchify(out_seq, m.schedule, m.projections, cfg.channels));
  }
  return out;
}

// Velocity prediction for a single latent; the stage (and with it the patch
// size and projections) follows from t.
template <typename S>
Tensor<S> predict_velocity(VelocityModel<S>& m, const Tensor<S>& latent, double t, int class_id) {
  std::vector<ForwardSlot<S>> slots{{latent, t, class_id}};
  return forward_velocity_packed(m, slots)[0];
}

}  // namespace patchflow
