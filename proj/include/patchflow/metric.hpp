// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace patchflow {

inline constexpr int kMetricFeatureDim = 64;

// Fréchet distance between two Gaussians:
//   ||mu1 - mu2||^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2})
// The matrix square root uses symmetric eigendecomposition with negative
// eigenvalues clipped at zero.
double frechet_gaussian(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2);

// Projects flattened samples to kMetricFeatureDim dims through a fixed
// seeded Gaussian random matrix and returns one feature row per sample.
Eigen::MatrixXd project_features(const std::vector<std::vector<float>>& samples,
                                 std::uint64_t proj_seed);

// Fréchet score between Gaussian fits of the projected generated and
// reference sets. NOT comparable to any pretrained-feature metric; it only
// ranks models evaluated under the same reference set and projection seed.
// Each set needs at least two samples.
double desk_fid(const std::vector<std::vector<float>>& generated,
                const std::vector<std::vector<float>>& reference, std::uint64_t proj_seed);

}  // namespace patchflow
