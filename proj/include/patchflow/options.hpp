// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "patchflow/errors.hpp"

namespace patchflow {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 2;
  double ema_decay = 0.9999;
  long steps = 1000;
  int token_budget = 0;  // 0: use the finest stage's token count
  std::uint64_t seed = 0;
  bool group_by_stage = false;   // ablation: pack only same-stage samples together
  double class_dropout = 0.1;    // probability of training on the null class

  void validate(int max_stage_tokens) const {
    require(ema_decay > 0.0 && ema_decay < 1.0, ErrorKind::Config,
            "train: ema decay must lie in (0,1)");
    require(batch_size >= 1 && steps >= 1, ErrorKind::Config,
            "train: batch size and steps must be positive");
    require(token_budget == 0 || token_budget >= max_stage_tokens, ErrorKind::Config,
            "train: token budget below the largest stage token count");
    require(class_dropout >= 0.0 && class_dropout <= 1.0, ErrorKind::Config,
            "train: class dropout must lie in [0,1]");
  }
};

struct SampleConfig {
  int steps = 50;
  int class_id = 0;
  std::uint64_t seed = 0;
  bool use_ema = true;
  // Bench support: always evaluate both guidance branches even where a
  // stage's cfg scale is exactly 1.
  bool disable_single_eval_shortcut = false;

  void validate() const {
    require(steps >= 1, ErrorKind::Config, "sample: need at least one step");
  }
};

}  // namespace patchflow
