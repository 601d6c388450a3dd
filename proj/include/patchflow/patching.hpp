// SPDX-License-Identifier: Apache-2.0
//
// Patchify / Unpatchify with one projection pair per stage.
//
// Patch flattening order is fixed: within a patch, component index
// q = c*(ph*pw) + i*pw + j addresses channel c, patch row i, patch column j
// (channel-major, then row-major). Patches are ordered row-major over the
// token grid. This layout is part of the checkpoint format.

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "patchflow/schedule.hpp"
#include "patchflow/tensor.hpp"

namespace patchflow {

// Gathers non-overlapping (ph, pw) patches of a (C, H, W) field into a
// [L, C*ph*pw] matrix. Exact inverse of patches_to_field.
template <typename S>
Tensor<S> field_to_patches(const Tensor<S>& x, int ph, int pw) {
  require(x.rank() == 3, ErrorKind::Dimension,
          "field_to_patches: expected (C,H,W) tensor, got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(ph > 0 && pw > 0 && H % ph == 0 && W % pw == 0, ErrorKind::Dimension,
          "field_to_patches: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
              " does not tile " + std::to_string(H) + "x" + std::to_string(W));
  int gh = H / ph, gw = W / pw;
  int L = gh * gw, ds = C * ph * pw;
  std::vector<S> v(static_cast<std::size_t>(L) * ds);
  auto xs = x.data();
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      S* out = v.data() + static_cast<std::size_t>(gy * gw + gx) * ds;
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < ph; ++i)
          for (int j = 0; j < pw; ++j)
            out[c * ph * pw + i * pw + j] =
                xs[static_cast<std::size_t>((c * H + gy * ph + i)) * W + gx * pw + j];
    }
  auto xn = x.node().get();
  return detail_make_op<S>(
      "field_to_patches", {L, ds}, std::move(v), {x},
      [xn, C, H, W, ph, pw, gh, gw, ds](detail::Node<S>& nd) {
        auto gx_ = xn->grad_span();
        for (int gy = 0; gy < gh; ++gy)
          for (int gxi = 0; gxi < gw; ++gxi) {
            const S* g = nd.grad.data() + static_cast<std::size_t>(gy * gw + gxi) * ds;
            for (int c = 0; c < C; ++c)
              for (int i = 0; i < ph; ++i)
                for (int j = 0; j < pw; ++j)
                  gx_[static_cast<std::size_t>((c * H + gy * ph + i)) * W + gxi * pw + j] +=
                      g[c * ph * pw + i * pw + j];
          }
      });
}

// Scatters a [L, C*ph*pw] patch matrix back onto a (C, H, W) field.
template <typename S>
Tensor<S> patches_to_field(const Tensor<S>& p, int C, int H, int W, int ph, int pw) {
  require(p.rank() == 2, ErrorKind::Dimension, "patches_to_field: expected rank-2 tensor");
  int gh = H / ph, gw = W / pw;
  require(H % ph == 0 && W % pw == 0 && p.dim(0) == gh * gw && p.dim(1) == C * ph * pw,
          ErrorKind::Dimension,
          "patches_to_field: " + shape_str(p.shape()) + " does not match field (" +
              std::to_string(C) + "," + std::to_string(H) + "," + std::to_string(W) +
              ") with patch " + std::to_string(ph) + "x" + std::to_string(pw));
  int ds = C * ph * pw;
  std::vector<S> v(static_cast<std::size_t>(C) * H * W);
  auto ps = p.data();
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const S* in = ps.data() + static_cast<std::size_t>(gy * gw + gx) * ds;
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < ph; ++i)
          for (int j = 0; j < pw; ++j)
            v[static_cast<std::size_t>((c * H + gy * ph + i)) * W + gx * pw + j] =
                in[c * ph * pw + i * pw + j];
    }
  auto pn = p.node().get();
  return detail_make_op<S>(
      "patches_to_field", {C, H, W}, std::move(v), {p},
      [pn, C, H, W, ph, pw, gh, gw, ds](detail::Node<S>& nd) {
        auto gp = pn->grad_span();
        for (int gy = 0; gy < gh; ++gy)
          for (int gx = 0; gx < gw; ++gx) {
            S* g = gp.data() + static_cast<std::size_t>(gy * gw + gx) * ds;
            for (int c = 0; c < C; ++c)
              for (int i = 0; i < ph; ++i)
                for (int j = 0; j < pw; ++j)
                  g[c * ph * pw + i * pw + j] +=
                      nd.grad[static_cast<std::size_t>((c * H + gy * ph + i)) * W + gx * pw + j];
          }
      });
}

// Projection pair of one stage: tokens = patches * w_in^T + b_in and
// patches = tokens * w_out^T + b_out, with w_in [d, ds], w_out [ds, d].
template <typename S>
struct StageProjection {
  Tensor<S> w_in, b_in, w_out, b_out;
};

template <typename S>
using ProjectionSet = std::vector<StageProjection<S>>;

template <typename S>
struct TokenSeq {
  Tensor<S> tokens;  // [L, d]
  int grid_h = 0;
  int grid_w = 0;
  int stage = 0;
};

template <typename S>
TokenSeq<S> patchify(const Tensor<S>& latent, int stage, const PatchSchedule& schedule,
                     const ProjectionSet<S>& proj) {
  const Stage& st = schedule.stage(stage);
  const StageProjection<S>& pr = proj[static_cast<std::size_t>(stage)];
  int C = latent.dim(0), H = latent.dim(1), W = latent.dim(2);
  require(pr.w_in.dim(1) == C * st.patch_h * st.patch_w, ErrorKind::Dimension,
          "patchify: projection expects patch dim " + std::to_string(pr.w_in.dim(1)) +
              ", latent gives " + std::to_string(C * st.patch_h * st.patch_w));
  Tensor<S> patches = field_to_patches(latent, st.patch_h, st.patch_w);
  TokenSeq<S> seq;
  seq.tokens = add_rowvec(matmul_nt(patches, pr.w_in), pr.b_in);
  seq.grid_h = H / st.patch_h;
  seq.grid_w = W / st.patch_w;
  seq.stage = stage;
  return seq;
}

template <typename S>
Tensor<S> unpatchify(const TokenSeq<S>& seq, const PatchSchedule& schedule,
                     const ProjectionSet<S>& proj, int C) {
  const Stage& st = schedule.stage(seq.stage);
  const StageProjection<S>& pr = proj[static_cast<std::size_t>(seq.stage)];
  require(seq.tokens.dim(0) == seq.grid_h * seq.grid_w, ErrorKind::Dimension,
          "unpatchify: token count does not match grid");
  Tensor<S> patches = add_rowvec(matmul_nt(seq.tokens, pr.w_out), pr.b_out);
  return patches_to_field(patches, C, seq.grid_h * st.patch_h, seq.grid_w * st.patch_w,
                          st.patch_h, st.patch_w);
}

// Fixed 2D sin/cos positional table for a (grid_h, grid_w) token grid.
// Tokens are ordered row-major; the first d/2 columns encode the row
// coordinate, the rest the column coordinate. Every row has squared norm
// exactly d/2. Recomputed per stage grid.
template <typename S>
Tensor<S> pos_embed(int grid_h, int grid_w, int d) {
  require(d % 4 == 0, ErrorKind::Config,
          "pos_embed: width " + std::to_string(d) + " must be divisible by 4");
  int d4 = d / 4;
  std::vector<double> omega(static_cast<std::size_t>(d4));
  for (int i = 0; i < d4; ++i)
    omega[static_cast<std::size_t>(i)] =
        1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d4));
  std::vector<S> v(static_cast<std::size_t>(grid_h) * grid_w * d);
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) {
      S* row = v.data() + static_cast<std::size_t>(r * grid_w + c) * d;
      for (int i = 0; i < d4; ++i) {
        double ar = r * omega[static_cast<std::size_t>(i)];
        double ac = c * omega[static_cast<std::size_t>(i)];
        row[i] = static_cast<S>(std::sin(ar));
        row[d4 + i] = static_cast<S>(std::cos(ar));
        row[2 * d4 + i] = static_cast<S>(std::sin(ac));
        row[3 * d4 + i] = static_cast<S>(std::cos(ac));
      }
    }
  return Tensor<S>::from({grid_h * grid_w, d}, std::move(v));
}

// Builds the projections of a coarser stage from pretrained 2x2 ones.
//
// Patchify weights average: the w_in column for patch coordinate (c, i, j)
// is 1/n times the pretrained column for (c, i mod 2, j mod 2), where n is
// the number of 2x2 subpatches; the bias is copied. Unpatchify weights
// duplicate: the w_out row (and b_out entry) for (c, i, j) is the pretrained
// row/entry for (c, i mod 2, j mod 2). As a consequence the new token equals
// the pretrained projection of the mean of the n subpatches, and the new
// output repeats the same 2x2 prediction across all n subpatch positions.
template <typename S>
StageProjection<S> init_from_pretrained(const StageProjection<S>& pre, int channels, int patch_h,
                                        int patch_w) {
  require(patch_h % 2 == 0 && patch_w % 2 == 0, ErrorKind::Config,
          "init_from_pretrained: target patch dims must be multiples of 2");
  int d = pre.w_in.dim(0);
  require(pre.w_in.dim(1) == channels * 4, ErrorKind::Conversion,
          "init_from_pretrained: source projections must be 2x2 (patch dim " +
              std::to_string(channels * 4) + ", got " + std::to_string(pre.w_in.dim(1)) + ")");
  int ds = channels * patch_h * patch_w;
  int n_sub = (patch_h * patch_w) / 4;
  S inv_n = S(1) / static_cast<S>(n_sub);

  std::vector<S> w_in(static_cast<std::size_t>(d) * ds);
  std::vector<S> w_out(static_cast<std::size_t>(ds) * d);
  std::vector<S> b_out(static_cast<std::size_t>(ds));
  auto pw_in = pre.w_in.data();
  auto pw_out = pre.w_out.data();
  auto pb_out = pre.b_out.data();
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < patch_h; ++i)
      for (int j = 0; j < patch_w; ++j) {
        int q = c * patch_h * patch_w + i * patch_w + j;
        int q2 = c * 4 + (i % 2) * 2 + (j % 2);
        for (int r = 0; r < d; ++r)
          w_in[static_cast<std::size_t>(r) * ds + q] =
              inv_n * pw_in[static_cast<std::size_t>(r) * (channels * 4) + q2];
        for (int k = 0; k < d; ++k)
          w_out[static_cast<std::size_t>(q) * d + k] =
              pw_out[static_cast<std::size_t>(q2) * d + k];
        b_out[static_cast<std::size_t>(q)] = pb_out[static_cast<std::size_t>(q2)];
      }

  StageProjection<S> out;
  out.w_in = Tensor<S>::from({d, ds}, std::move(w_in));
  out.b_in = pre.b_in.clone_detached();
  out.w_out = Tensor<S>::from({ds, d}, std::move(w_out));
  out.b_out = Tensor<S>::from({ds}, std::move(b_out));
  return out;
}

}  // namespace patchflow
