// SPDX-License-Identifier: Apache-2.0
//
// patchflow CLI: train / convert / sample / analyze / eval / bench.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

#include "patchflow/bench.hpp"
#include "patchflow/config.hpp"
#include "patchflow/flops.hpp"
#include "patchflow/metric.hpp"
#include "patchflow/sampler.hpp"
#include "patchflow/serialize.hpp"
#include "patchflow/train.hpp"

using namespace patchflow;

namespace {

Config load_config(const std::string& path) {
  Config c = Config::from_file(path);
  c.validate_keys();
  return c;
}

void require_matching_model(const Config& c, const ModelConfig& have) {
  ModelConfig want = have;
  want.d = c.get_int("model.d", have.d);
  want.depth = c.get_int("model.depth", have.depth);
  want.heads = c.get_int("model.heads", have.heads);
  want.mlp_ratio = c.get_int("model.mlp_ratio", have.mlp_ratio);
  want.num_classes = c.get_int("model.classes", have.num_classes);
  want.channels = c.get_int("model.channels", have.channels);
  want.latent_size = c.get_int("model.latent", have.latent_size);
  require(want.same_backbone(have), ErrorKind::Conversion,
          "config model.* keys do not match the checkpoint's model");
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& log_path, const std::string& init_from) {
  Config c = load_config(config_path);
  ModelConfig mc = model_from_config(c);
  PatchSchedule schedule = schedule_from_config(c, mc);
  TrainConfig tc = train_config_from(c);
  DataConfig dc = data_config_from(c, mc);
  std::uint64_t init_seed = c.get_u64("train.init_seed", 1);

  TrainState<float> st;
  if (!init_from.empty()) {
    TensorBundle b = load_bundle(init_from);
    require(same_schedule(schedule_from_meta(b), schedule), ErrorKind::Conversion,
            "checkpoint schedule differs from the config schedule; run 'convert' first");
    st = train_state_from_bundle<float>(b, tc.learning_rate, tc.weight_decay);
    require(st.model.config.same_backbone(mc) &&
                st.model.config.use_level_embed == mc.use_level_embed,
            ErrorKind::Conversion, "checkpoint model does not match the config model");
  } else {
    st = TrainState<float>::init(mc, schedule, tc, init_seed);
  }

  ToyDataset data = gen_dataset(dc);
  std::ofstream log;
  std::ostream* log_stream = nullptr;
  if (!log_path.empty()) {
    log.open(log_path);
    require(log.good(), ErrorKind::Io, "cannot open log file '" + log_path + "'");
    log_stream = &log;
  }
  TrainRun<float> run = train_model(st, data, tc, log_stream);

  TensorBundle out = train_state_to_bundle(st);
  save_bundle(out_path, out);
  std::cout << "steps " << run.losses.size() << "\n";
  std::cout << "final_loss " << format_g9(run.losses.back()) << "\n";
  std::cout << "train_flops_percent " << format_g9(run.flops_percent_vs_uniform) << "\n";
  std::cout << "checkpoint " << out_path << "\n";
  return 0;
}

int cmd_convert(const std::string& in_path, const std::string& config_path,
                const std::string& out_path) {
  Config c = load_config(config_path);
  TensorBundle b = load_bundle(in_path);
  TrainState<float> src = train_state_from_bundle<float>(b);
  require_matching_model(c, src.model.config);

  ModelConfig mc = src.model.config;
  mc.use_level_embed = c.get_bool("model.level_embed", mc.use_level_embed);
  PatchSchedule schedule = schedule_from_config(c, mc);
  TrainConfig tc = train_config_from(c);

  TrainState<float> dst = convert_train_state(src, schedule, mc.use_level_embed, tc);
  TensorBundle out = train_state_to_bundle(dst);
  save_bundle(out_path, out);
  std::cout << "converted " << in_path << " -> " << out_path << "\n";
  std::cout << "stages " << schedule.num_stages() << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& out_path, int class_id,
               std::uint64_t seed, int steps, int count, bool use_ema, bool trajectory) {
  TensorBundle b = load_bundle(ckpt_path);
  TrainState<float> st = train_state_from_bundle<float>(b);
  VelocityModel<float> model = use_ema ? st.ema_model() : st.model;

  TensorBundle out;
  write_model_meta(out, model.config, model.schedule);
  out.set_meta("kind", "latents");
  out.set_meta("sample.steps", std::to_string(steps));
  out.set_meta("sample.class", std::to_string(class_id));
  out.set_meta("sample.seed", std::to_string(seed));
  for (int i = 0; i < count; ++i) {
    SampleConfig sc;
    sc.steps = steps;
    sc.class_id = class_id;
    sc.seed = seed + static_cast<std::uint64_t>(i);
    sc.use_ema = use_ema;
    std::vector<Tensor<float>> traj;
    Tensor<float> x = euler_sample(model, sc, nullptr, trajectory ? &traj : nullptr);
    add_latent(out, "sample." + std::to_string(i), x);
    if (trajectory)
      for (std::size_t k = 0; k < traj.size(); ++k)
        add_latent(out, "traj." + std::to_string(i) + "." + std::to_string(k), traj[k]);
  }
  save_bundle(out_path, out);
  std::cout << "samples " << count << "\n";
  std::cout << "latents " << out_path << "\n";
  return 0;
}

int cmd_analyze(const std::string& config_path, int steps) {
  Config c = load_config(config_path);
  ModelConfig mc = model_from_config(c);
  PatchSchedule schedule = schedule_from_config(c, mc);
  FlopsReport r = analyze_flops(mc, schedule, steps);
  std::cout << format_flops_report(mc, schedule, r);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path) {
  Config c = load_config(config_path);
  TensorBundle b = load_bundle(ckpt_path);
  TrainState<float> st = train_state_from_bundle<float>(b);
  require_matching_model(c, st.model.config);
  DataConfig dc = data_config_from(c, st.model.config);
  EvalConfig ec = eval_config_from(c);
  SampleConfig sc = sample_config_from(c);

  ToyDataset data = gen_dataset(dc);
  VelocityModel<float> model = sc.use_ema ? st.ema_model() : st.model;
  std::vector<std::vector<float>> generated;
  for (int i = 0; i < ec.samples; ++i) {
    SampleConfig one = sc;
    one.steps = ec.steps;
    one.class_id = i % st.model.config.num_classes;
    one.seed = ec.seed + static_cast<std::uint64_t>(i);
    Tensor<float> x = euler_sample(model, one);
    generated.emplace_back(x.data().begin(), x.data().end());
  }
  double score = desk_fid(generated, data.latents, ec.proj_seed);
  std::cout << "samples " << ec.samples << "\n";
  std::cout << "eval_steps " << ec.steps << "\n";
  std::cout << "desk_fid " << format_g9(score) << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt_path, int steps, int repeats) {
  TensorBundle b = load_bundle(ckpt_path);
  TrainState<float> st = train_state_from_bundle<float>(b);
  VelocityModel<float> model = st.ema_model();
  require(!model.schedule.single_stage(), ErrorKind::Config,
          "bench: checkpoint already uses a single-stage schedule");
  BenchResult r = bench_wallclock(model, steps, repeats);
  std::cout << format_bench_result(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"staged-patch flow-matching trainer and sampler"};
  app.require_subcommand(1);

  std::string config_path, out_path, log_path, init_from, in_path, ckpt_path;
  int class_id = 0, steps = 50, count = 1, repeats = 5;
  std::uint64_t seed = 0;
  bool use_ema = true, trajectory = false;

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out_path)->required();
  train->add_option("--log", log_path);
  train->add_option("--init-from", init_from);

  CLI::App* convert = app.add_subcommand("convert", "re-stage a uniform 2x2 checkpoint");
  convert->add_option("--in", in_path)->required();
  convert->add_option("--config", config_path)->required();
  convert->add_option("--out", out_path)->required();

  CLI::App* sample = app.add_subcommand("sample", "generate latents from a checkpoint");
  sample->add_option("--ckpt", ckpt_path)->required();
  sample->add_option("--out", out_path)->required();
  sample->add_option("--class", class_id);
  sample->add_option("--seed", seed);
  sample->add_option("--steps", steps);
  sample->add_option("--count", count);
  sample->add_flag("--ema,!--no-ema", use_ema);
  sample->add_flag("--trajectory", trajectory);

  CLI::App* analyze = app.add_subcommand("analyze", "closed-form compute report");
  analyze->add_option("--config", config_path)->required();
  analyze->add_option("--steps", steps);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against the dataset");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--config", config_path)->required();

  CLI::App* bench = app.add_subcommand("bench", "wall-clock staged vs uniform sampling");
  bench->add_option("--ckpt", ckpt_path)->required();
  bench->add_option("--steps", steps);
  bench->add_option("--repeats", repeats);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_path, log_path, init_from);
    if (convert->parsed()) return cmd_convert(in_path, config_path, out_path);
    if (sample->parsed())
      return cmd_sample(ckpt_path, out_path, class_id, seed, steps, count, use_ema, trajectory);
    if (analyze->parsed()) return cmd_analyze(config_path, steps);
    if (eval->parsed()) return cmd_eval(ckpt_path, config_path);
    if (bench->parsed()) return cmd_bench(ckpt_path, steps, repeats);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
