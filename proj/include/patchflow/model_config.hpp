// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "patchflow/errors.hpp"

namespace patchflow {

// Backbone hyperparameters shared by every stage. Only the Patchify /
// Unpatchify projections (and the optional level table) depend on the stage
// count; block parameters never do.
struct ModelConfig {
  int d = 384;
  int depth = 6;
  int heads = 6;
  int mlp_ratio = 4;
  int num_classes = 8;
  int channels = 4;
  int latent_size = 32;
  bool use_level_embed = false;

  // id of the learned null class used for classifier-free guidance; the
  // class table carries one extra row for it
  int null_class() const { return num_classes; }
  int mlp_hidden() const { return mlp_ratio * d; }
  int head_dim() const { return d / heads; }

  void validate() const {
    require(d > 0 && depth >= 0 && heads > 0, ErrorKind::Config,
            "model: d, depth, heads must be positive");
    require(d % heads == 0, ErrorKind::Config, "model: d must be divisible by heads");
    require(d % 4 == 0, ErrorKind::Config, "model: d must be divisible by 4");
    require(num_classes > 0, ErrorKind::Config, "model: need at least one class");
    require(channels > 0 && latent_size > 0, ErrorKind::Config,
            "model: channels and latent size must be positive");
    require(mlp_ratio > 0, ErrorKind::Config, "model: mlp_ratio must be positive");
  }

  bool same_backbone(const ModelConfig& o) const {
    return d == o.d && depth == o.depth && heads == o.heads && mlp_ratio == o.mlp_ratio &&
           num_classes == o.num_classes && channels == o.channels && latent_size == o.latent_size;
  }
};

}  // namespace patchflow
