#pragma once

#include <algorithm>

#include <Eigen/Eigenvalues>

#include "pvrnn/core/params.hpp"
#include "pvrnn/error.hpp"

namespace pvrnn {

struct PcaResult {
  Vec mean;
  Mat components;           // one column per component, descending variance
  Vec explained_variance;   // per kept component
  double total_variance = 0.0;
  Mat projection;           // samples x components
};

/// Mean-centred PCA of the rows of `samples`.
inline PcaResult pca(const Mat& samples, int n_components = 2) {
  if (n_components < 1) throw ConfigError("pca: n_components must be >= 1");
  if (samples.rows() < n_components) throw ConfigError("pca: fewer samples than components");
  if (samples.cols() < n_components) throw ConfigError("pca: fewer dimensions than components");
  PcaResult r;
  r.mean = samples.colwise().mean().transpose();
  const Mat centred = samples.rowwise() - r.mean.transpose();
  const double denom = samples.rows() > 1 ? static_cast<double>(samples.rows() - 1) : 1.0;
  const Mat cov = (centred.transpose() * centred) / denom;
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  const Vec& ev = es.eigenvalues();  // ascending
  const Eigen::Index n = ev.size();
  r.components.resize(samples.cols(), n_components);
  r.explained_variance.resize(n_components);
  for (int c = 0; c < n_components; ++c) {
    r.components.col(c) = es.eigenvectors().col(n - 1 - c);
    r.explained_variance[c] = std::max(0.0, ev[n - 1 - c]);
  }
  r.total_variance = std::max(0.0, ev.sum());
  r.projection = centred * r.components;
  return r;
}

/// Squared reconstruction error of `samples` from their projection.
inline double pca_reconstruction_error(const Mat& samples, const PcaResult& r) {
  const Mat back = (r.projection * r.components.transpose()).rowwise() + r.mean.transpose();
  return (samples - back).squaredNorm();
}

}  // namespace pvrnn
