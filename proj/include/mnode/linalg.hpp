#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace mnode {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A point of the embedded state space: 3x1 for the sphere, 3x3 for rotations.
/// Fixed capacity, so no heap traffic in the inner loops.
using State = Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

/// Coordinates of a skew-symmetric matrix. Component k generates rotation
/// about axis k, so skew_from_axial(w) * v == w.cross(v).
struct AxialVector {
  Vec3 omega = Vec3::Zero();

  AxialVector() = default;
  explicit AxialVector(const Vec3& w) : omega(w) {}
  AxialVector(double x, double y, double z) : omega(x, y, z) {}

  double norm() const { return omega.norm(); }
  friend bool operator==(const AxialVector& a, const AxialVector& b) {
    return a.omega == b.omega;
  }
};

inline Mat3 skew_from_axial(const AxialVector& w) {
  const Vec3& o = w.omega;
  Mat3 k;
  // clang-format off
  k <<     0.0, -o.z(),  o.y(),
         o.z(),    0.0, -o.x(),
        -o.y(),  o.x(),    0.0;
  // clang-format on
  return k;
}

/// Reads the skew part of `k`; exact inverse of skew_from_axial on skew input.
inline AxialVector axial_from_skew(const Mat3& k) {
  return AxialVector(0.5 * (k(2, 1) - k(1, 2)), 0.5 * (k(0, 2) - k(2, 0)),
                     0.5 * (k(1, 0) - k(0, 1)));
}

inline bool is_skew(const Mat3& k, double tol = 0.0) {
  return (k + k.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline double frobenius_inner(const Mat3& a, const Mat3& b) {
  return a.cwiseProduct(b).sum();
}

inline double frobenius_inner(const State& a, const State& b) {
  return a.cwiseProduct(b).sum();
}

/// Angles below this use the Taylor branch of the Rodrigues coefficients.
inline constexpr double kSmallAngle = 1e-4;

/// Rodrigues coefficients sin(t)/t and (1 - cos t)/t^2.
struct RodriguesCoeffs {
  double a;
  double b;
};

inline RodriguesCoeffs rodrigues_coeffs(double theta) {
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return {1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0)),
            0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0))};
  }
  const double half = std::sin(0.5 * theta) / theta;
  return {std::sin(theta) / theta, 2.0 * half * half};
}

/// exp of skew_from_axial(w) in closed form. The result is a rotation matrix.
inline Mat3 expm_skew3(const AxialVector& w) {
  const Mat3 k = skew_from_axial(w);
  const auto [a, b] = rodrigues_coeffs(w.norm());
  return Mat3::Identity() + a * k + b * (k * k);
}

/// General 3x3 exponential by scaling and squaring of an order-18 Taylor
/// polynomial. Used as the independent check on expm_skew3.
inline Mat3 expm_dense(const Mat3& a) {
  const double norm = a.norm();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat3 scaled = a / std::ldexp(1.0, squarings);

  constexpr int kOrder = 18;
  Mat3 result = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k <= kOrder; ++k) {
    term = (term * scaled) / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// ||R^T R - I||_F + |det R - 1|.
inline double rotation_defect(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm() + std::abs(r.determinant() - 1.0);
}

/// The so(3) basis used throughout: B1 about z, B2 about y, B3 about x.
inline Mat3 basis_b1() { return skew_from_axial({0.0, 0.0, 1.0}); }
inline Mat3 basis_b2() { return skew_from_axial({0.0, 1.0, 0.0}); }
inline Mat3 basis_b3() { return skew_from_axial({1.0, 0.0, 0.0}); }

}  // namespace mnode
