#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace pplab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double log1pexp(double x) {
  if (x > 35) return x + std::exp(-x);
  if (x < -35) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// Singular values below rtol * sigma_max are treated as zero.
inline constexpr double kPinvRtol = 1e-10;

inline Mat pseudo_inverse(const Mat& m, double rtol = kPinvRtol) {
  if (m.size() == 0) return Mat::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  double cut = rtol * (sv.size() ? sv(0) : 0.0);
  Vec inv = Vec::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Smallest singular value above the pseudo-inverse cutoff (0 for a zero matrix).
inline double min_nonzero_singular_value(const Mat& m, double rtol = kPinvRtol) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& sv = svd.singularValues();
  double cut = rtol * sv(0);
  double best = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) best = sv(i);
  return best;
}

/// Smallest of the min(rows, cols) singular values.
inline double min_singular_value(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues().minCoeff();
}

inline Eigen::Index numerical_rank(const Mat& m, double rtol = kPinvRtol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& sv = svd.singularValues();
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rtol * sv(0)) ++r;
  return r;
}

}  // namespace pplab
