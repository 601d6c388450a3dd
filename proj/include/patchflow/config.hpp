// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value config files: one "key = value" per line, '#' comments.
// Values may be lists ("schedule.patch = 4x4 2x2"). Key groups:
//
//   model.d model.depth model.heads model.mlp_ratio model.classes
//   model.channels model.latent model.level_embed
//   schedule.boundaries schedule.patch schedule.cfg
//   train.lr train.weight_decay train.batch_size train.ema_decay
//   train.steps train.token_budget train.seed train.init_seed
//   train.group_by_stage train.class_dropout
//   sample.steps sample.class sample.seed sample.count sample.use_ema
//   data.seed data.per_class
//   eval.samples eval.steps eval.seed eval.proj_seed
//
// Reading a config marks keys as consumed; check_consumed() rejects any key
// the command did not recognize.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchflow/dataset.hpp"
#include "patchflow/model_config.hpp"
#include "patchflow/options.hpp"
#include "patchflow/schedule.hpp"

namespace patchflow {

class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& def) const;
  double get_num(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  long get_long(const std::string& key, long def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;

  // config error naming every key no command consumed
  void check_consumed() const;

  // config error naming every key outside the documented schema
  void validate_keys() const;

 private:
  struct Item {
    std::string key;
    std::string value;
    mutable bool used = false;
  };
  const Item* find(const std::string& key) const;
  std::vector<Item> items_;
  std::string origin_;
};

ModelConfig model_from_config(const Config& c);
PatchSchedule schedule_from_config(const Config& c, const ModelConfig& m);
TrainConfig train_config_from(const Config& c);
SampleConfig sample_config_from(const Config& c);
DataConfig data_config_from(const Config& c, const ModelConfig& m);

struct EvalConfig {
  int samples = 32;
  int steps = 20;
  std::uint64_t seed = 900;
  std::uint64_t proj_seed = 777;
};
EvalConfig eval_config_from(const Config& c);

}  // namespace patchflow
