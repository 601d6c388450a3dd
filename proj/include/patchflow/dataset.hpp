// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "patchflow/tensor.hpp"

namespace patchflow {

struct DataConfig {
  std::uint64_t seed = 1234;
  int num_classes = 8;
  int per_class = 64;
  int channels = 4;
  int latent_size = 32;
};

// Synthetic class-conditional latents: each class is a fixed mixture of
// oriented Gaussian bumps with per-channel amplitudes; samples jitter the
// bump centers and amplitudes and add a little pixel noise. The whole
// dataset is normalized to zero mean / unit variance. Regeneration from the
// same seed is bit-identical.
struct ToyDataset {
  DataConfig config;
  std::vector<std::vector<float>> latents;  // each channels*I*I, row-major
  std::vector<int> labels;

  int size() const { return static_cast<int>(latents.size()); }
  std::int64_t latent_numel() const {
    return static_cast<std::int64_t>(config.channels) * config.latent_size * config.latent_size;
  }

  template <typename S>
  Tensor<S> latent_as(int index) const {
    const std::vector<float>& src = latents[static_cast<std::size_t>(index)];
    std::vector<S> v(src.begin(), src.end());
    return Tensor<S>::from({config.channels, config.latent_size, config.latent_size},
                           std::move(v));
  }

  // minimum pairwise distance between class-conditional means; positive by
  // construction and asserted at generation time
  double min_class_mean_distance() const;
};

ToyDataset gen_dataset(const DataConfig& config);

}  // namespace patchflow
