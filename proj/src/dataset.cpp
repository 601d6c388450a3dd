// SPDX-License-Identifier: Apache-2.0
#include "patchflow/dataset.hpp"

#include <cmath>

#include "patchflow/errors.hpp"
#include "patchflow/rng.hpp"

namespace patchflow {

namespace {

struct Bump {
  double cx, cy;        // center
  double s1, s2;        // principal std devs
  double theta;         // orientation
  std::vector<double> amp;  // per-channel amplitude
};

// Evaluates an oriented anisotropic Gaussian at (x, y).
double bump_value(const Bump& b, double cx, double cy, double x, double y) {
  double dx = x - cx, dy = y - cy;
  double ct = std::cos(b.theta), st = std::sin(b.theta);
  double u = ct * dx + st * dy;
  double v = -st * dx + ct * dy;
  return std::exp(-0.5 * (u * u / (b.s1 * b.s1) + v * v / (b.s2 * b.s2)));
}

}  // namespace

ToyDataset gen_dataset(const DataConfig& config) {
  require(config.per_class >= 1, ErrorKind::Config, "dataset: per_class must be >= 1");
  require(config.num_classes >= 1, ErrorKind::Config, "dataset: need at least one class");
  const int I = config.latent_size;
  const int C = config.channels;
  const int bumps_per_class = 3;

  Rng master(config.seed);
  Rng class_rng = master.fork(1);
  Rng sample_rng = master.fork(2);

  // fixed per-class bump layouts
  std::vector<std::vector<Bump>> layouts;
  for (int k = 0; k < config.num_classes; ++k) {
    std::vector<Bump> bumps;
    for (int b = 0; b < bumps_per_class; ++b) {
      Bump bp;
      bp.cx = class_rng.uniform(0.25 * I, 0.75 * I);
      bp.cy = class_rng.uniform(0.25 * I, 0.75 * I);
      bp.s1 = class_rng.uniform(0.06 * I, 0.2 * I);
      bp.s2 = class_rng.uniform(0.06 * I, 0.2 * I);
      bp.theta = class_rng.uniform(0.0, M_PI);
      for (int c = 0; c < C; ++c) bp.amp.push_back(class_rng.uniform(-1.0, 1.0));
      bumps.push_back(std::move(bp));
    }
    layouts.push_back(std::move(bumps));
  }

  ToyDataset ds;
  ds.config = config;
  for (int k = 0; k < config.num_classes; ++k) {
    for (int i = 0; i < config.per_class; ++i) {
      std::vector<float> latent(static_cast<std::size_t>(C) * I * I, 0.0f);
      for (const Bump& base : layouts[static_cast<std::size_t>(k)]) {
        double cx = base.cx + sample_rng.normal() * 0.05 * I;
        double cy = base.cy + sample_rng.normal() * 0.05 * I;
        double gain = 1.0 + 0.15 * sample_rng.normal();
        for (int c = 0; c < C; ++c) {
          double a = base.amp[static_cast<std::size_t>(c)] * gain;
          for (int y = 0; y < I; ++y)
            for (int x = 0; x < I; ++x)
              latent[static_cast<std::size_t>((c * I + y)) * I + x] +=
                  static_cast<float>(a * bump_value(base, cx, cy, x, y));
        }
      }
      for (float& v : latent) v += static_cast<float>(0.05 * sample_rng.normal());
      ds.latents.push_back(std::move(latent));
      ds.labels.push_back(k);
    }
  }

  // dataset-wide normalization to zero mean / unit variance
  double mean = 0.0;
  std::size_t total = 0;
  for (const auto& l : ds.latents) {
    for (float v : l) mean += v;
    total += l.size();
  }
  mean /= static_cast<double>(total);
  double var = 0.0;
  for (const auto& l : ds.latents)
    for (float v : l) var += (v - mean) * (v - mean);
  var /= static_cast<double>(total);
  double inv_std = 1.0 / std::sqrt(var > 0 ? var : 1.0);
  for (auto& l : ds.latents)
    for (float& v : l) v = static_cast<float>((v - mean) * inv_std);

  require(ds.min_class_mean_distance() > 0.0, ErrorKind::Statistics,
          "dataset: class-conditional means are not distinguishable");
  return ds;
}

double ToyDataset::min_class_mean_distance() const {
  int n = config.num_classes;
  std::size_t dim = static_cast<std::size_t>(latent_numel());
  std::vector<std::vector<double>> means(static_cast<std::size_t>(n),
                                         std::vector<double>(dim, 0.0));
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    auto& m = means[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < dim; ++j) m[j] += latents[i][j];
    counts[static_cast<std::size_t>(labels[i])] += 1;
  }
  for (int k = 0; k < n; ++k)
    for (std::size_t j = 0; j < dim; ++j) means[static_cast<std::size_t>(k)][j] /= counts[static_cast<std::size_t>(k)];
  double best = -1.0;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        double d = means[static_cast<std::size_t>(a)][j] - means[static_cast<std::size_t>(b)][j];
        d2 += d * d;
      }
      double d = std::sqrt(d2);
      if (best < 0 || d < best) best = d;
    }
  return best;
}

}  // namespace patchflow
