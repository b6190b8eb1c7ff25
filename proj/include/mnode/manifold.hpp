#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "mnode/errors.hpp"
#include "mnode/linalg.hpp"

namespace mnode {

enum class ManifoldKind { Sphere2, SO3 };

inline std::string_view to_string(ManifoldKind k) {
  return k == ManifoldKind::Sphere2 ? "sphere2" : "so3";
}

inline ManifoldKind manifold_kind_from_string(std::string_view s) {
  if (s == "sphere2") return ManifoldKind::Sphere2;
  if (s == "so3") return ManifoldKind::SO3;
  throw InvalidConfig("unknown manifold kind '" + std::string(s) + "'");
}

/// Columns of the embedded representation: 1 (unit vector) or 3 (rotation).
inline int state_cols(ManifoldKind k) { return k == ManifoldKind::Sphere2 ? 1 : 3; }

/// Intrinsic dimension of the manifold.
inline int intrinsic_dim(ManifoldKind k) { return k == ManifoldKind::Sphere2 ? 2 : 3; }

/// Default tolerance for "this state is on the manifold".
inline constexpr double kOnManifoldTol = 1e-8;

/// A point of S^2 (3-vector) or SO(3) (3x3 matrix) stored in embedded form.
/// Construction does not check the constraint; use defect() or
/// require_on_manifold() for that.
class ManifoldPoint {
 public:
  ManifoldPoint(ManifoldKind kind, State value) : kind_(kind), value_(std::move(value)) {
    if (value_.cols() != state_cols(kind_))
      throw InvalidConfig("state shape does not match manifold kind");
  }

  static ManifoldPoint sphere(const Vec3& x) { return {ManifoldKind::Sphere2, State(x)}; }
  static ManifoldPoint rotation(const Mat3& r) { return {ManifoldKind::SO3, State(r)}; }

  ManifoldKind kind() const { return kind_; }
  const State& value() const { return value_; }

  Vec3 as_vec3() const { return value_.col(0); }
  Mat3 as_mat3() const { return value_; }

  friend bool operator==(const ManifoldPoint& a, const ManifoldPoint& b) {
    return a.kind_ == b.kind_ && a.value_ == b.value_;
  }

 private:
  ManifoldKind kind_;
  State value_;
};

/// S^2: | ||x|| - 1 |.  SO(3): ||X^T X - I||_F + |det X - 1|.
inline double defect(ManifoldKind kind, const State& v) {
  if (kind == ManifoldKind::Sphere2) return std::abs(v.col(0).norm() - 1.0);
  return rotation_defect(Mat3(v));
}

inline double defect(const ManifoldPoint& p) { return defect(p.kind(), p.value()); }

/// max() that keeps NaN, so an overflowed prediction is never reported as 0.
inline double worst_defect(double a, double b) { return std::isnan(a) || std::isnan(b) ? std::nan("") : std::max(a, b); }

inline void require_on_manifold(const ManifoldPoint& p, double tol = kOnManifoldTol) {
  const double d = defect(p);
  if (!(d <= tol))
    throw OffManifold("point off " + std::string(to_string(p.kind())) +
                      " (defect " + std::to_string(d) + ")");
}

/// Nearest manifold point: normalization for S^2, polar factor for SO(3).
inline ManifoldPoint project(ManifoldKind kind, const State& ambient) {
  if (kind == ManifoldKind::Sphere2) {
    const Vec3 x = ambient.col(0);
    const double n = x.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateInput("cannot project zero vector onto S^2");
    return ManifoldPoint::sphere(x / n);
  }
  const Mat3 a = ambient;
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s(2) > 1e-12 * s(0))) throw DegenerateInput("cannot project singular matrix onto SO(3)");
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
  return ManifoldPoint::rotation(u * v.transpose());
}

/// Squared embedded (Euclidean / Frobenius) distance.
inline double distance_sq(const ManifoldPoint& a, const ManifoldPoint& b) {
  return (a.value() - b.value()).squaredNorm();
}

/// One supervised pair (x0, y).
struct Sample {
  ManifoldPoint input;
  ManifoldPoint target;
};

struct RngSeed {
  std::uint64_t value = 0;
};

/// Seeded sample stream. Equal seeds produce bitwise-equal draws.
class SampleStream {
 public:
  explicit SampleStream(RngSeed seed) : engine_(seed.value) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Uniform (Haar) sample: normalized Gaussian for S^2, normalized Gaussian
/// quaternion for SO(3).
inline ManifoldPoint sample_uniform(ManifoldKind kind, SampleStream& rng) {
  if (kind == ManifoldKind::Sphere2) {
    for (;;) {
      const Vec3 g(rng.normal(), rng.normal(), rng.normal());
      const double n = g.norm();
      if (n > 1e-12) return ManifoldPoint::sphere(g / n);
    }
  }
  for (;;) {
    Eigen::Vector4d g(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const double n = g.norm();
    if (n <= 1e-12) continue;
    g /= n;
    const Eigen::Quaterniond q(g(0), g(1), g(2), g(3));
    return ManifoldPoint::rotation(q.toRotationMatrix());
  }
}

}  // namespace mnode
