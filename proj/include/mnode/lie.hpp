#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "mnode/errors.hpp"
#include "mnode/linalg.hpp"
#include "mnode/manifold.hpp"

namespace mnode {

/// The linear vector field x -> B x. On SO(3) it acts by left
/// multiplication X -> B X.
struct LinearField {
  Mat3 matrix = Mat3::Zero();
  std::string id;

  State apply(const State& x) const { return matrix * x; }
};

/// Ordered generators g_1..g_m of the control-affine field.
struct GeneratorSet {
  ManifoldKind kind = ManifoldKind::Sphere2;
  std::vector<LinearField> fields;

  std::size_t size() const { return fields.size(); }
};

/// {B1, B2} on the sphere.
inline GeneratorSet sphere_generators() {
  return {ManifoldKind::Sphere2, {{basis_b1(), "B1"}, {basis_b2(), "B2"}}};
}

/// {B1, B2, B3} on the rotation group.
inline GeneratorSet so3_generators() {
  return {ManifoldKind::SO3, {{basis_b1(), "B1"}, {basis_b2(), "B2"}, {basis_b3(), "B3"}}};
}

inline GeneratorSet default_generators(ManifoldKind kind) {
  return kind == ManifoldKind::Sphere2 ? sphere_generators() : so3_generators();
}

/// Looks up one of the named basis matrices B1, B2, B3.
inline LinearField basis_field(const std::string& id) {
  if (id == "B1") return {basis_b1(), id};
  if (id == "B2") return {basis_b2(), id};
  if (id == "B3") return {basis_b3(), id};
  throw InvalidConfig("unknown generator id '" + id + "'");
}

/// Bracket of linear fields, using
///   [f,g]^i = sum_j f^j dg^i/dx^j - g^j df^i/dx^j.
/// For f = Bx, g = Cx this is (CB - BC) x. With this convention
/// [g1, g2] = g3 for the sphere generators, while the plain matrix
/// commutator B1 B2 - B2 B1 equals -B3.
inline LinearField lie_bracket_linear(const LinearField& f, const LinearField& g) {
  LinearField out;
  out.matrix = g.matrix * f.matrix - f.matrix * g.matrix;
  if (!f.id.empty() && !g.id.empty()) out.id = "[" + f.id + "," + g.id + "]";
  return out;
}

namespace detail {

inline bool span_duplicate(const Mat3& a, const Mat3& b) {
  const Mat3 na = a / a.norm();
  const Mat3 nb = b / b.norm();
  return (na - nb).norm() < 1e-10 || (na + nb).norm() < 1e-10;
}

}  // namespace detail

/// Union of the iterated bracket sets V^0 .. V^depth. Zero brackets and
/// fields that repeat an earlier one up to scale and sign are dropped.
inline std::vector<LinearField> lie_hull(const GeneratorSet& gens, int depth) {
  if (depth < 0) throw InvalidConfig("lie_hull depth must be >= 0");

  std::vector<LinearField> hull;
  auto try_add = [&](const LinearField& f, double zero_tol) {
    if (!(f.matrix.norm() > zero_tol)) return;
    for (const auto& h : hull)
      if (detail::span_duplicate(h.matrix, f.matrix)) return;
    hull.push_back(f);
  };

  for (const auto& f : gens.fields) try_add(f, 0.0);

  // hull[0, level_end) holds V^0 .. V^{level-1}; new brackets pair each
  // field with every earlier one.
  std::size_t level_end = hull.size();
  for (int level = 1; level <= depth; ++level) {
    const std::size_t prev_end = level_end;
    for (std::size_t i = 0; i < prev_end; ++i)
      for (std::size_t j = i + 1; j < prev_end; ++j)
        try_add(lie_bracket_linear(hull[i], hull[j]),
                1e-12 * hull[i].matrix.norm() * hull[j].matrix.norm());
    level_end = hull.size();
    if (level_end == prev_end) break;
  }
  return hull;
}

/// S^2: |x^T B x|.  SO(3): ||sym(X^T B X)||_F. Zero iff B x is tangent at x.
inline double verify_tangency(const LinearField& f, const ManifoldPoint& x) {
  require_on_manifold(x);
  if (x.kind() == ManifoldKind::Sphere2) {
    const Vec3 v = x.as_vec3();
    return std::abs(v.dot(f.matrix * v));
  }
  const Mat3 m = x.as_mat3().transpose() * f.matrix * x.as_mat3();
  return (0.5 * (m + m.transpose())).norm();
}

/// Largest tangency defect of any generator over `samples` uniform points.
inline double max_tangency_defect(const GeneratorSet& gens, SampleStream& rng, int samples = 100) {
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const auto x = sample_uniform(gens.kind, rng);
    for (const auto& f : gens.fields) worst = std::max(worst, verify_tangency(f, x));
  }
  return worst;
}

/// Numerical rank of {g(x) : g in hull} against dim M, with singular-value
/// cutoff 1e-10 * sigma_max.
inline bool bracket_generating_at(const GeneratorSet& gens, const ManifoldPoint& x, int depth = 2) {
  require_on_manifold(x);
  const auto hull = lie_hull(gens, depth);
  if (hull.empty()) return false;

  const int rows = 3 * static_cast<int>(x.value().cols());
  Eigen::MatrixXd values(rows, static_cast<Eigen::Index>(hull.size()));
  for (std::size_t c = 0; c < hull.size(); ++c) {
    const State v = hull[c].apply(x.value());
    values.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Eigen::VectorXd>(v.data(), rows);
  }
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(values).singularValues();
  if (sv.size() == 0 || !(sv(0) > 0.0)) return false;
  const double cutoff = 1e-10 * sv(0);
  const auto rank = std::count_if(sv.data(), sv.data() + sv.size(), [&](double s) { return s > cutoff; });
  return rank == intrinsic_dim(x.kind());
}

}  // namespace mnode
