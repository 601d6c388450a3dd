// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "patchflow/train.hpp"

using namespace patchflow;

namespace {

ModelConfig small_config(int latent = 16, bool level = false) {
  ModelConfig c;
  c.d = 32;
  c.depth = 2;
  c.heads = 4;
  c.num_classes = 4;
  c.channels = 2;
  c.latent_size = latent;
  c.use_level_embed = level;
  return c;
}

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  rng.fill_normal(t.mutable_data());
  return t;
}

template <typename S>
void randomize_parameters(VelocityModel<S>& m, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (auto& [name, p] : m.named_parameters()) rng.fill_normal(p->mutable_data(), scale);
}

DataConfig small_data(const ModelConfig& m, int per_class = 8) {
  DataConfig d;
  d.seed = 77;
  d.num_classes = m.num_classes;
  d.per_class = per_class;
  d.channels = m.channels;
  d.latent_size = m.latent_size;
  return d;
}

}  // namespace

TEST_CASE("fm_interpolate endpoints and midpoint formula") {
  Rng rng(1);
  Tensord x1 = random_tensor<double>({2, 4, 4}, rng);
  Tensord x0 = random_tensor<double>({2, 4, 4}, rng);

  auto [a, ua] = fm_interpolate(x1, x0, 0.0);
  for (std::size_t i = 0; i < 32; ++i) CHECK(a.data()[i] == x0.data()[i]);
  auto [b, ub] = fm_interpolate(x1, x0, 1.0);
  for (std::size_t i = 0; i < 32; ++i) CHECK(b.data()[i] == x1.data()[i]);

  Tensord zeros = Tensord::zeros({2, 4, 4});
  Tensord twos = Tensord::full({2, 4, 4}, 2.0);
  auto [mid, u] = fm_interpolate(twos, zeros, 0.5);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(mid.data()[i] == 1.0);
    CHECK(u.data()[i] == 2.0);
  }

  CHECK_THROWS_AS(fm_interpolate(x1, Tensord::zeros({2, 4, 5}), 0.5), Error);
}

TEST_CASE("fm_loss trivial values and the summation oracle") {
  Rng rng(2);
  Tensord target = random_tensor<double>({3, 5}, rng);
  CHECK(fm_loss(target, target).item() == 0.0);

  Tensord plus_one = target.clone_detached();
  for (auto& v : plus_one.mutable_data()) v += 1.0;
  CHECK(fm_loss(plus_one, target).item() == doctest::Approx(1.0).epsilon(1e-12));

  Tensord pred = random_tensor<double>({3, 5}, rng);
  double want = 0;
  for (std::size_t i = 0; i < 15; ++i) {
    double d = pred.data()[i] - target.data()[i];
    want += d * d;
  }
  want /= 15.0;
  CHECK(std::abs(fm_loss(pred, target).item() - want) < 1e-12);
}

TEST_CASE("optimizer: zero gradient leaves parameters untouched") {
  Tensord p = Tensord::from({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  AdamW<double> opt(1e-4, 0.0);
  // no grad at all: skipped entirely
  opt.step({&p});
  CHECK(p.data()[0] == 1.0);
  // explicit zero gradient on the very first update also moves nothing
  Tensord loss = scale(sum(mul(p, Tensord::zeros({3}))), 1.0);
  loss.backward();
  opt.step({&p});
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
}

TEST_CASE("optimizer: bias-corrected first step moves by about lr") {
  Tensord p = Tensord::from({1}, {0.3});
  p.set_requires_grad(true);
  Tensord g = Tensord::from({1}, {1.0});
  Tensord loss = sum(mul(p, g));
  loss.backward();
  AdamW<double> opt(1e-4, 0.0);
  opt.step({&p});
  CHECK(p.data()[0] == doctest::Approx(0.3 - 1e-4).epsilon(1e-6));
}

TEST_CASE("optimizer: zero decay decouples updates from parameter magnitude") {
  Tensord small = Tensord::from({1}, {0.1});
  Tensord large = Tensord::from({1}, {1000.0});
  small.set_requires_grad(true);
  large.set_requires_grad(true);
  for (Tensord* p : {&small, &large}) {
    Tensord loss = sum(mul(*p, Tensord::full({1}, 1.0)));
    loss.backward();
  }
  AdamW<double> o1(1e-3, 0.0), o2(1e-3, 0.0);
  o1.step({&small});
  o2.step({&large});
  CHECK(0.1 - small.data()[0] == doctest::Approx(1000.0 - large.data()[0]).epsilon(1e-12));
}

TEST_CASE("ema_update endpoints and midpoint") {
  Tensorf ema = Tensorf::zeros({4});
  Tensorf params = Tensorf::full({4}, 2.0f);
  ema_update(ema, params, 0.5f);
  for (auto v : ema.data()) CHECK(v == 1.0f);

  Tensorf e0 = Tensorf::full({4}, 5.0f);
  ema_update(e0, params, 0.0f);
  for (auto v : e0.data()) CHECK(v == 2.0f);

  Tensorf e1 = Tensorf::full({4}, 5.0f);
  ema_update(e1, params, 1.0f);
  for (auto v : e1.data()) CHECK(v == 5.0f);
}

TEST_CASE("epoch batches cover every index exactly once") {
  Rng rng(3);
  auto batches = build_epoch_batches(37, 5, rng);
  std::vector<int> seen(37, 0);
  for (const auto& b : batches)
    for (int i : b) seen[static_cast<std::size_t>(i)] += 1;
  for (int s : seen) CHECK(s == 1);
  CHECK(batches.size() == 8);
  CHECK(batches.back().size() == 2);
}

TEST_CASE("packed forward equals per-sample unpacked forward, padding included") {
  ModelConfig cfg = small_config(16);
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  Rng rng(4);
  VelocityModel<float> m = init_model<float>(cfg, sched, rng);
  randomize_parameters(m, 200);

  Rng data_rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<ForwardSlot<float>> slots;
    int total = 0;
    for (int i = 0; i < 3; ++i) {
      double t = data_rng.uniform();
      slots.push_back({random_tensor<float>({cfg.channels, 16, 16}, data_rng), t,
                       data_rng.uniform_int(cfg.num_classes)});
      total += sched.tokens(stage_of(t, sched));
    }
    // pad the pack beyond the occupied rows to exercise padding+mask
    std::vector<Tensor<float>> packed = forward_velocity_packed(m, slots, total + 13);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      std::vector<ForwardSlot<float>> single{slots[i]};
      Tensor<float> alone = forward_velocity_packed(m, single)[0];
      REQUIRE(packed[i].shape() == alone.shape());
      for (std::size_t k = 0; k < static_cast<std::size_t>(alone.size()); ++k)
        CHECK(std::abs(packed[i].data()[k] - alone.data()[k]) < 1e-5f);
    }
  }
}

TEST_CASE("train_step: single-stage batches leave other stages' projections untouched") {
  ModelConfig cfg = small_config(16);
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  TrainConfig tc;
  tc.steps = 1;
  tc.batch_size = 4;
  tc.seed = 9;
  TrainState<float> st = TrainState<float>::init(cfg, sched, tc, 11);
  randomize_parameters(st.model, 201);

  ToyDataset data = gen_dataset(small_data(cfg));
  Rng rng(6);

  // warmup steps with mixed stages so optimizer moments exist for all
  // projections; the isolation property must still hold afterwards
  for (int warm = 0; warm < 2; ++warm) {
    std::vector<TrainSample<float>> batch;
    for (int i = 0; i < 4; ++i)
      batch.push_back(make_train_sample<float>(data, i, sched, cfg, 0.1, rng));
    train_step(st, batch, tc);
  }

  // now a batch entirely inside stage 0 (t < 0.5)
  std::vector<TrainSample<float>> batch;
  for (int i = 0; i < 4; ++i) {
    double t = 0.1 + 0.09 * i;
    auto [x_t, u_t] = fm_interpolate(data.latent_as<float>(i),
                                     random_tensor<float>({cfg.channels, 16, 16}, rng), t);
    TrainSample<float> s;
    s.x_t = x_t;
    s.u_t = u_t;
    s.t = t;
    s.class_id = data.labels[static_cast<std::size_t>(i)];
    s.stage = stage_of(t, sched);
    s.token_len = sched.tokens(s.stage);
    s.dataset_index = i;
    REQUIRE(s.stage == 0);
    batch.push_back(std::move(s));
  }
  Tensor<float> w_before = st.model.projections[1].w_in.clone_detached();
  Tensor<float> wo_before = st.model.projections[1].w_out.clone_detached();
  Tensor<float> active_before = st.model.projections[0].w_in.clone_detached();
  train_step(st, batch, tc);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w_before.size()); ++i)
    CHECK(st.model.projections[1].w_in.data()[i] == w_before.data()[i]);
  for (std::size_t i = 0; i < static_cast<std::size_t>(wo_before.size()); ++i)
    CHECK(st.model.projections[1].w_out.data()[i] == wo_before.data()[i]);
  // while the active stage's projections moved
  bool moved = false;
  for (std::size_t i = 0; i < static_cast<std::size_t>(active_before.size()); ++i)
    if (st.model.projections[0].w_in.data()[i] != active_before.data()[i]) moved = true;
  CHECK(moved);
}

TEST_CASE("first-step loss with a zero output head equals mean squared target velocity") {
  ModelConfig cfg = small_config(16);
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  TrainConfig tc;
  tc.batch_size = 3;
  tc.seed = 12;
  TrainState<float> st = TrainState<float>::init(cfg, sched, tc, 13);  // zero head by init

  ToyDataset data = gen_dataset(small_data(cfg));
  Rng rng(7);
  std::vector<TrainSample<float>> batch;
  double want = 0;
  for (int i = 0; i < 3; ++i) {
    batch.push_back(make_train_sample<float>(data, i, sched, cfg, 0.1, rng));
    double acc = 0;
    for (auto v : batch.back().u_t.data()) acc += static_cast<double>(v) * v;
    want += acc / static_cast<double>(batch.back().u_t.size());
  }
  want /= 3.0;
  StepResult<float> res = train_step(st, batch, tc);
  CHECK(std::abs(res.loss - want) < 1e-5);
}

TEST_CASE("training is deterministic: same seed, bit-identical loss trace") {
  ModelConfig cfg = small_config(16);
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1.5, 1.5}, cfg.latent_size);
  ToyDataset data = gen_dataset(small_data(cfg));
  TrainConfig tc;
  tc.steps = 12;
  tc.batch_size = 3;
  tc.seed = 99;

  std::ostringstream log_a, log_b;
  TrainState<float> a = TrainState<float>::init(cfg, sched, tc, 55);
  TrainRun<float> run_a = train_model(a, data, tc, &log_a);
  TrainState<float> b = TrainState<float>::init(cfg, sched, tc, 55);
  TrainRun<float> run_b = train_model(b, data, tc, &log_b);

  REQUIRE(run_a.losses.size() == run_b.losses.size());
  for (std::size_t i = 0; i < run_a.losses.size(); ++i)
    CHECK(run_a.losses[i] == run_b.losses[i]);  // bitwise
  CHECK(log_a.str() == log_b.str());
  CHECK(!log_a.str().empty());
}

TEST_CASE("smoothed training loss decreases over 2000 steps") {
  ModelConfig cfg = small_config(16);
  cfg.d = 64;
  cfg.heads = 4;
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  ToyDataset data = gen_dataset(small_data(cfg, 16));
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 2;
  tc.seed = 4242;
  tc.learning_rate = 1e-3;
  TrainState<float> st = TrainState<float>::init(cfg, sched, tc, 77);
  TrainRun<float> run = train_model(st, data, tc);

  auto window_mean = [&](std::size_t end) {
    double acc = 0;
    for (std::size_t i = end - 100; i < end; ++i) acc += run.losses[i];
    return acc / 100.0;
  };
  double early = window_mean(100);
  double late = window_mean(2000);
  CHECK(late < early);
  // staged training really spends fewer MACs than uniform would
  CHECK(run.flops_percent_vs_uniform < 100.0);
  CHECK(run.flops_percent_vs_uniform > 30.0);
}

TEST_CASE("group-by-stage packing keeps packs stage-homogeneous") {
  ModelConfig cfg = small_config(16);
  PatchSchedule sched = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  TrainConfig tc;
  tc.batch_size = 6;
  tc.group_by_stage = true;
  TrainState<float> st = TrainState<float>::init(cfg, sched, tc, 31);
  ToyDataset data = gen_dataset(small_data(cfg));
  Rng rng(15);
  std::vector<TrainSample<float>> batch;
  for (int i = 0; i < 6; ++i)
    batch.push_back(make_train_sample<float>(data, i, sched, cfg, 0.1, rng));
  StepResult<float> res = train_step(st, batch, tc);
  CHECK(std::isfinite(res.loss));
}

TEST_CASE("conversion: single-stage target reproduces the checkpoint bit for bit") {
  ModelConfig cfg = small_config(32);
  PatchSchedule uni = make_schedule({}, {{2, 2}}, {1.0}, cfg.latent_size);
  TrainConfig tc;
  TrainState<float> st = TrainState<float>::init(cfg, uni, tc, 21);
  randomize_parameters(st.model, 202);

  VelocityModel<float> conv = convert_model(st.model, uni, cfg.use_level_embed);
  auto a = st.model.named_parameters();
  auto b = conv.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    REQUIRE(a[i].second->size() == b[i].second->size());
    for (std::size_t k = 0; k < static_cast<std::size_t>(a[i].second->size()); ++k)
      CHECK(a[i].second->data()[k] == b[i].second->data()[k]);
  }
}

TEST_CASE("conversion: fine-stage predictions are bit-identical to the source model") {
  ModelConfig cfg = small_config(32);
  PatchSchedule uni = make_schedule({}, {{2, 2}}, {1.0}, cfg.latent_size);
  PatchSchedule two = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1.5, 3.5}, cfg.latent_size);
  TrainConfig tc;
  TrainState<float> st = TrainState<float>::init(cfg, uni, tc, 22);
  randomize_parameters(st.model, 203);

  VelocityModel<float> conv = convert_model(st.model, two, true);
  Rng rng(8);
  for (int i = 0; i < 5; ++i) {
    Tensor<float> latent = random_tensor<float>({cfg.channels, 32, 32}, rng);
    double t = 0.5 + 0.1 * i;
    int cls = i % cfg.num_classes;
    Tensor<float> v_src = predict_velocity(st.model, latent, t, cls);
    Tensor<float> v_conv = predict_velocity(conv, latent, t, cls);
    for (std::size_t k = 0; k < static_cast<std::size_t>(v_src.size()); ++k)
      CHECK(v_src.data()[k] == v_conv.data()[k]);
  }
}

TEST_CASE("conversion: coarse stage on block-constant latents matches the source on the "
          "downsampled grid") {
  ModelConfig cfg = small_config(32);
  PatchSchedule uni = make_schedule({}, {{2, 2}}, {1.0}, cfg.latent_size);
  PatchSchedule two = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1.5, 3.5}, cfg.latent_size);
  TrainConfig tc;
  TrainState<float> st = TrainState<float>::init(cfg, uni, tc, 23);
  randomize_parameters(st.model, 204);
  VelocityModel<float> conv = convert_model(st.model, two, false);

  Rng rng(9);
  int I = cfg.latent_size, C = cfg.channels;
  Tensor<float> big = Tensor<float>::zeros({C, I, I});
  Tensor<float> small = Tensor<float>::zeros({C, I / 2, I / 2});
  for (int c = 0; c < C; ++c)
    for (int by = 0; by < I / 4; ++by)
      for (int bx = 0; bx < I / 4; ++bx) {
        float v = static_cast<float>(rng.normal());
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j)
            big.mutable_data()[static_cast<std::size_t>((c * I + by * 4 + i)) * I + bx * 4 + j] =
                v;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            small.mutable_data()[static_cast<std::size_t>((c * (I / 2) + by * 2 + i)) * (I / 2) +
                                 bx * 2 + j] = v;
      }

  double t = 0.2;
  Tensor<float> v_conv = predict_velocity(conv, big, t, 1);
  Tensor<float> v_src = predict_velocity(st.model, small, t, 1);
  REQUIRE(v_conv.shape() == Shape{C, I, I});
  REQUIRE(v_src.shape() == Shape{C, I / 2, I / 2});
  // converted output repeats each source 2x2 prediction across the block
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < I; ++y)
      for (int x = 0; x < I; ++x) {
        int by = y / 4, bx = x / 4;
        int sy = by * 2 + y % 2, sx = bx * 2 + x % 2;
        float got = v_conv.data()[static_cast<std::size_t>((c * I + y)) * I + x];
        float want = v_src.data()[static_cast<std::size_t>((c * (I / 2) + sy)) * (I / 2) + sx];
        CHECK(std::abs(got - want) < 1e-5f);
      }
}

TEST_CASE("conversion: EMA weights convert alongside model weights") {
  ModelConfig cfg = small_config(32);
  PatchSchedule uni = make_schedule({}, {{2, 2}}, {1.0}, cfg.latent_size);
  PatchSchedule two = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1.5, 3.5}, cfg.latent_size);
  TrainConfig tc;
  TrainState<float> st = TrainState<float>::init(cfg, uni, tc, 24);
  randomize_parameters(st.model, 205);
  for (std::size_t i = 0; i < st.ema.size(); ++i) {
    Rng r(300 + i);
    r.fill_normal(st.ema[i].mutable_data(), 0.05);
  }

  TrainState<float> conv = convert_train_state(st, two, false, tc);
  VelocityModel<float> src_ema = st.ema_model();
  VelocityModel<float> conv_ema = conv.ema_model();
  Rng rng(10);
  Tensor<float> latent = random_tensor<float>({cfg.channels, 32, 32}, rng);
  Tensor<float> a = predict_velocity(src_ema, latent, 0.9, 2);
  Tensor<float> b = predict_velocity(conv_ema, latent, 0.9, 2);
  for (std::size_t k = 0; k < static_cast<std::size_t>(a.size()); ++k)
    CHECK(a.data()[k] == b.data()[k]);
}

TEST_CASE("conversion rejects non-uniform or mismatched sources") {
  ModelConfig cfg = small_config(32);
  PatchSchedule two = make_schedule({0.5}, {{4, 4}, {2, 2}}, {1, 1}, cfg.latent_size);
  TrainConfig tc;
  TrainState<float> staged = TrainState<float>::init(cfg, two, tc, 25);
  CHECK_THROWS_AS(convert_model(staged.model, two, false), Error);

  PatchSchedule uni44 = make_schedule({}, {{4, 4}}, {1.0}, cfg.latent_size);
  TrainState<float> coarse = TrainState<float>::init(cfg, uni44, tc, 26);
  CHECK_THROWS_AS(convert_model(coarse.model, two, false), Error);
}
