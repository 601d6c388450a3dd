// SPDX-License-Identifier: Apache-2.0
#include "patchflow/config.hpp"

#include <fstream>
#include <sstream>

#include "patchflow/errors.hpp"
#include "patchflow/textio.hpp"

namespace patchflow {

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path);
}

Config Config::from_string(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Config,
            origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line +
                "'");
    Item item;
    item.key = trim(line.substr(0, eq));
    item.value = trim(line.substr(eq + 1));
    require(!item.key.empty(), ErrorKind::Config,
            origin + ":" + std::to_string(lineno) + ": empty key");
    for (const Item& prev : c.items_)
      require(prev.key != item.key, ErrorKind::Config,
              origin + ": duplicate key '" + item.key + "'");
    c.items_.push_back(std::move(item));
  }
  return c;
}

const Config::Item* Config::find(const std::string& key) const {
  for (const Item& it : items_)
    if (it.key == key) {
      it.used = true;
      return &it;
    }
  return nullptr;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

std::string Config::get_str(const std::string& key, const std::string& def) const {
  const Item* it = find(key);
  return it ? it->value : def;
}

double Config::get_num(const std::string& key, double def) const {
  const Item* it = find(key);
  if (!it) return def;
  try {
    return std::stod(it->value);
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "key '" + key + "': not a number: '" + it->value + "'");
  }
}

int Config::get_int(const std::string& key, int def) const {
  return static_cast<int>(get_long(key, def));
}

long Config::get_long(const std::string& key, long def) const {
  const Item* it = find(key);
  if (!it) return def;
  try {
    return std::stol(it->value);
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "key '" + key + "': not an integer: '" + it->value + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t def) const {
  const Item* it = find(key);
  if (!it) return def;
  try {
    return std::stoull(it->value);
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "key '" + key + "': not an unsigned integer: '" + it->value + "'");
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  const Item* it = find(key);
  if (!it) return def;
  if (it->value == "1" || it->value == "true" || it->value == "on") return true;
  if (it->value == "0" || it->value == "false" || it->value == "off") return false;
  fail(ErrorKind::Config, "key '" + key + "': not a boolean: '" + it->value + "'");
}

void Config::check_consumed() const {
  std::string unknown;
  for (const Item& it : items_)
    if (!it.used) unknown += (unknown.empty() ? "" : ", ") + it.key;
  require(unknown.empty(), ErrorKind::Config, origin_ + ": unknown key(s): " + unknown);
}

void Config::validate_keys() const {
  static const char* kKnown[] = {
      "model.d",          "model.depth",        "model.heads",      "model.mlp_ratio",
      "model.classes",    "model.channels",     "model.latent",     "model.level_embed",
      "schedule.boundaries", "schedule.patch",  "schedule.cfg",
      "train.lr",         "train.weight_decay", "train.batch_size", "train.ema_decay",
      "train.steps",      "train.token_budget", "train.seed",       "train.init_seed",
      "train.group_by_stage", "train.class_dropout",
      "sample.steps",     "sample.class",       "sample.seed",      "sample.count",
      "sample.use_ema",
      "data.seed",        "data.per_class",
      "eval.samples",     "eval.steps",         "eval.seed",        "eval.proj_seed",
  };
  std::string unknown;
  for (const Item& it : items_) {
    bool known = false;
    for (const char* k : kKnown)
      if (it.key == k) known = true;
    if (!known) unknown += (unknown.empty() ? "" : ", ") + it.key;
  }
  require(unknown.empty(), ErrorKind::Config, origin_ + ": unknown key(s): " + unknown);
}

ModelConfig model_from_config(const Config& c) {
  ModelConfig m;
  m.d = c.get_int("model.d", m.d);
  m.depth = c.get_int("model.depth", m.depth);
  m.heads = c.get_int("model.heads", m.heads);
  m.mlp_ratio = c.get_int("model.mlp_ratio", m.mlp_ratio);
  m.num_classes = c.get_int("model.classes", m.num_classes);
  m.channels = c.get_int("model.channels", m.channels);
  m.latent_size = c.get_int("model.latent", m.latent_size);
  m.use_level_embed = c.get_bool("model.level_embed", m.use_level_embed);
  m.validate();
  return m;
}

PatchSchedule schedule_from_config(const Config& c, const ModelConfig& m) {
  std::string patch = c.get_str("schedule.patch", "2x2");
  std::string boundaries = c.get_str("schedule.boundaries", "");
  std::string cfg = c.get_str("schedule.cfg", "");
  return schedule_from_strings(boundaries, patch, cfg, m.latent_size);
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.learning_rate = c.get_num("train.lr", t.learning_rate);
  t.weight_decay = c.get_num("train.weight_decay", t.weight_decay);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.ema_decay = c.get_num("train.ema_decay", t.ema_decay);
  t.steps = c.get_long("train.steps", t.steps);
  t.token_budget = c.get_int("train.token_budget", t.token_budget);
  t.seed = c.get_u64("train.seed", t.seed);
  t.group_by_stage = c.get_bool("train.group_by_stage", t.group_by_stage);
  t.class_dropout = c.get_num("train.class_dropout", t.class_dropout);
  return t;
}

SampleConfig sample_config_from(const Config& c) {
  SampleConfig s;
  s.steps = c.get_int("sample.steps", s.steps);
  s.class_id = c.get_int("sample.class", s.class_id);
  s.seed = c.get_u64("sample.seed", s.seed);
  s.use_ema = c.get_bool("sample.use_ema", s.use_ema);
  return s;
}

DataConfig data_config_from(const Config& c, const ModelConfig& m) {
  DataConfig d;
  d.seed = c.get_u64("data.seed", d.seed);
  d.per_class = c.get_int("data.per_class", d.per_class);
  d.num_classes = m.num_classes;
  d.channels = m.channels;
  d.latent_size = m.latent_size;
  return d;
}

EvalConfig eval_config_from(const Config& c) {
  EvalConfig e;
  e.samples = c.get_int("eval.samples", e.samples);
  e.steps = c.get_int("eval.steps", e.steps);
  e.seed = c.get_u64("eval.seed", e.seed);
  e.proj_seed = c.get_u64("eval.proj_seed", e.proj_seed);
  return e;
}

}  // namespace patchflow
