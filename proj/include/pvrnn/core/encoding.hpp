#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pvrnn/core/config.hpp"
#include "pvrnn/core/forward.hpp"
#include "pvrnn/core/state.hpp"

namespace pvrnn {

/// Planar workspace position, normalized to [-1, 1]^2.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Soft population code of a scalar in [-1, 1]: `bins` reference points evenly
/// spaced over the interval, p_j proportional to exp(-(v - r_j)^2 / sigma^2).
class SoftmaxCodec {
 public:
  SoftmaxCodec(int bins, double sigma) : sigma_(sigma) {
    if (bins < 2) throw ConfigError("softmax codec needs at least two bins");
    if (!(sigma > 0.0)) throw ConfigError("softmax codec sigma must be positive");
    refs_.resize(bins);
    for (int j = 0; j < bins; ++j) refs_[j] = -1.0 + 2.0 * j / (bins - 1);
  }

  explicit SoftmaxCodec(const NetworkConfig& cfg) : SoftmaxCodec(cfg.softmax_bins, cfg.encoding_sigma) {}

  int bins() const { return static_cast<int>(refs_.size()); }
  double sigma() const { return sigma_; }
  const std::vector<double>& references() const { return refs_; }
  double spacing() const { return refs_[1] - refs_[0]; }

  Vec encode(double v) const {
    Vec logits(bins());
    for (int j = 0; j < bins(); ++j) {
      const double d = v - refs_[j];
      logits[j] = -d * d / (sigma_ * sigma_);
    }
    return softmax(logits);
  }

  /// Inverts the kernel: log p_j + r_j^2 / sigma^2 is affine in r_j with slope
  /// 2 v / sigma^2. Fits that line over the argmax bin and its two neighbours
  /// and clamps the result to the argmax cell.
  double decode(const Eigen::Ref<const Vec>& p) const {
    const int n = bins();
    Eigen::Index arg = 0;
    p.maxCoeff(&arg);
    const int lo = std::clamp(static_cast<int>(arg) - 1, 0, n - 3 < 0 ? 0 : n - 3);
    const int hi = std::min(lo + 2, n - 1);
    const double s2 = sigma_ * sigma_;
    double mr = 0.0, my = 0.0;
    const int m = hi - lo + 1;
    std::array<double, 3> ys{};
    for (int j = lo; j <= hi; ++j) {
      const double pj = std::max(p[j], 1e-300);
      ys[j - lo] = std::log(pj) + refs_[j] * refs_[j] / s2;
      mr += refs_[j];
      my += ys[j - lo];
    }
    mr /= m;
    my /= m;
    double sxy = 0.0, sxx = 0.0;
    for (int j = lo; j <= hi; ++j) {
      sxy += (refs_[j] - mr) * (ys[j - lo] - my);
      sxx += (refs_[j] - mr) * (refs_[j] - mr);
    }
    const double v = 0.5 * s2 * sxy / sxx;
    const double half = 0.5 * spacing();
    const double cell_lo = std::max(-1.0, refs_[arg] - half);
    const double cell_hi = std::min(1.0, refs_[arg] + half);
    return std::clamp(v, cell_lo, cell_hi);
  }

  /// Probability-weighted mean of the reference points.
  double decode_expectation(const Eigen::Ref<const Vec>& p) const {
    double acc = 0.0;
    for (int j = 0; j < bins(); ++j) acc += p[j] * refs_[j];
    return acc;
  }

  SoftmaxFrame encode_point(const Point2& pt) const {
    SoftmaxFrame f(2, bins());
    f.channel(0) = encode(pt.x);
    f.channel(1) = encode(pt.y);
    return f;
  }

  Point2 decode_point(const SoftmaxFrame& f) const {
    if (f.dof() != 2) throw ConfigError("decode_point: frame is not planar");
    return {decode(f.channel(0)), decode(f.channel(1))};
  }

  std::vector<SoftmaxFrame> encode_path(std::span<const Point2> path) const {
    std::vector<SoftmaxFrame> out;
    out.reserve(path.size());
    for (const auto& p : path) out.push_back(encode_point(p));
    return out;
  }

  std::vector<Point2> decode_path(std::span<const SoftmaxFrame> frames) const {
    std::vector<Point2> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(decode_point(f));
    return out;
  }

 private:
  std::vector<double> refs_;
  double sigma_;
};

}  // namespace pvrnn
