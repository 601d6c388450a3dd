// SPDX-License-Identifier: Apache-2.0
#include "patchflow/metric.hpp"

#include <cmath>

#include "patchflow/errors.hpp"
#include "patchflow/rng.hpp"

namespace patchflow {

namespace {

// Symmetric PSD square root with negative-eigenvalue clipping.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void fit_gaussian(const Eigen::MatrixXd& rows, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  require(rows.rows() >= 2, ErrorKind::Statistics,
          "metric: need at least two samples to fit a Gaussian");
  mu = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
}

}  // namespace

double frechet_gaussian(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2) {
  double mean_term = (mu1 - mu2).squaredNorm();
  // tr((cov1 cov2)^{1/2}) computed on the symmetric form
  // sqrt(cov1) cov2 sqrt(cov1), which has the same eigenvalues.
  Eigen::MatrixXd s1 = psd_sqrt(cov1);
  Eigen::MatrixXd cross = psd_sqrt(s1 * cov2 * s1);
  double trace_term = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  // the distance is non-negative; roundoff in the trace cancellation may dip
  // a hair below zero
  return std::max(0.0, mean_term + trace_term);
}

Eigen::MatrixXd project_features(const std::vector<std::vector<float>>& samples,
                                 std::uint64_t proj_seed) {
  require(!samples.empty(), ErrorKind::Statistics, "metric: empty sample set");
  std::size_t dim = samples[0].size();
  for (const auto& s : samples)
    require(s.size() == dim, ErrorKind::Dimension, "metric: samples have mixed sizes");

  Rng rng(proj_seed);
  Eigen::MatrixXd proj(kMetricFeatureDim, static_cast<Eigen::Index>(dim));
  double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int r = 0; r < kMetricFeatureDim; ++r)
    for (Eigen::Index c = 0; c < proj.cols(); ++c) proj(r, c) = rng.normal() * scale;

  Eigen::MatrixXd feats(static_cast<Eigen::Index>(samples.size()), kMetricFeatureDim);
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(j)) = samples[i][j];
    feats.row(static_cast<Eigen::Index>(i)) = (proj * x).transpose();
  }
  return feats;
}

double desk_fid(const std::vector<std::vector<float>>& generated,
                const std::vector<std::vector<float>>& reference, std::uint64_t proj_seed) {
  require(generated.size() >= 2 && reference.size() >= 2, ErrorKind::Statistics,
          "desk_fid: each set needs at least two samples");
  Eigen::MatrixXd gen = project_features(generated, proj_seed);
  Eigen::MatrixXd ref = project_features(reference, proj_seed);
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd cov1, cov2;
  fit_gaussian(gen, mu1, cov1);
  fit_gaussian(ref, mu2, cov2);
  return frechet_gaussian(mu1, cov1, mu2, cov2);
}

}  // namespace patchflow
