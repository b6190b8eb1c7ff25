#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mnode/linalg.hpp"
#include "mnode/manifold.hpp"
#include "mnode/network.hpp"

namespace mnode {

/// dL/dtheta, shape-congruent with the parameter list.
using ParamGradient = ParamList;

/// Derivatives of the Rodrigues coefficients, divided by theta:
/// c1 = a'(t)/t, c2 = b'(t)/t for a = sin t / t, b = (1 - cos t)/t^2.
struct RodriguesDerivs {
  double c1;
  double c2;
};

inline RodriguesDerivs rodrigues_derivs(double theta) {
  // Below this the closed forms lose digits to cancellation.
  constexpr double kSeriesBelow = 0.05;
  const double t2 = theta * theta;
  if (theta < kSeriesBelow) {
    return {-1.0 / 3.0 + t2 * (1.0 / 30.0 - t2 * (1.0 / 840.0 - t2 / 45360.0)),
            -1.0 / 12.0 + t2 * (1.0 / 180.0 - t2 * (1.0 / 6720.0 - t2 / 453600.0))};
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const double half = std::sin(0.5 * theta);
  const double one_minus_cos = 2.0 * half * half;
  return {(theta * c - s) / (t2 * theta), (theta * s - 2.0 * one_minus_cos) / (t2 * t2)};
}

/// Pulls a cotangent G of R = expm_skew3(w) back to w:
/// returns the vector with entries <G, dR/dw_j>.
inline Vec3 expm_skew3_vjp(const AxialVector& w, const Mat3& g) {
  const double theta = w.norm();
  const Mat3 k = skew_from_axial(w);
  const Mat3 k2 = k * k;
  const auto [a, b] = rodrigues_coeffs(theta);
  const auto [c1, c2] = rodrigues_derivs(theta);
  const double gk = frobenius_inner(g, k);
  const double gk2 = frobenius_inner(g, k2);

  Vec3 out;
  for (int j = 0; j < 3; ++j) {
    Vec3 e = Vec3::Zero();
    e(j) = 1.0;
    const Mat3 ej = skew_from_axial(AxialVector(e));
    out(j) = c1 * w.omega(j) * gk + a * frobenius_inner(g, ej) + c2 * w.omega(j) * gk2 +
             b * frobenius_inner(g, ej * k + k * ej);
  }
  return out;
}

struct ManifoldLayerVjp {
  State input_cotangent;
  ManifoldLayerParams grad;
};

/// Exact VJP of x -> expm_skew3(omega(x, p)) x, including the dependence of
/// omega on x through the gates.
inline ManifoldLayerVjp manifold_layer_vjp(const State& x, const ManifoldLayerParams& p,
                                           const ManifoldLayerTape& tape, const GeneratorSet& gens, double dt,
                                           const State& upstream) {
  const Mat3 g = upstream * x.transpose();
  const Vec3 omega_bar = expm_skew3_vjp(tape.omega, g);

  ManifoldLayerVjp r;
  r.input_cotangent = tape.rotation.transpose() * upstream;
  r.grad.terms.resize(p.terms.size());
  for (std::size_t i = 0; i < p.terms.size(); ++i) {
    const auto& t = p.terms[i];
    const double s = tape.gate(static_cast<Eigen::Index>(i));
    const double f_bar = dt * axial_from_skew(gens.fields[i].matrix).omega.dot(omega_bar);
    const double z_bar = f_bar * t.gain * s * (1.0 - s);
    auto& gt = r.grad.terms[i];
    gt.gain = f_bar * s;
    gt.weight = z_bar * x;
    gt.bias = z_bar;
    r.input_cotangent += z_bar * t.weight;
  }
  return r;
}

struct ClassicalLayerVjp {
  Eigen::VectorXd input_cotangent;
  ClassicalLayerParams grad;
};

/// Exact VJP of x -> x + dt A Sigma(W x + b).
inline ClassicalLayerVjp classical_layer_vjp(const Eigen::VectorXd& x, const ClassicalLayerParams& p, double dt,
                                             const Eigen::VectorXd& upstream) {
  const Eigen::VectorXd u = p.W * x + p.b;
  const Eigen::VectorXd s = vec_activation(u);
  const Eigen::VectorXd u_bar = (dt * (p.A.transpose() * upstream)).cwiseProduct(
      s.cwiseProduct(Eigen::VectorXd::Ones(s.size()) - s));
  ClassicalLayerVjp r;
  r.grad.A = dt * upstream * s.transpose();
  r.grad.W = u_bar * x.transpose();
  r.grad.b = u_bar;
  r.input_cotangent = upstream + p.W.transpose() * u_bar;
  return r;
}

namespace detail {

inline void add_to(ManifoldLayerParams& acc, const ManifoldLayerParams& g, double scale = 1.0) {
  for (std::size_t i = 0; i < acc.terms.size(); ++i) {
    acc.terms[i].gain += scale * g.terms[i].gain;
    acc.terms[i].weight += scale * g.terms[i].weight;
    acc.terms[i].bias += scale * g.terms[i].bias;
  }
}

inline void add_to(ClassicalLayerParams& acc, const ClassicalLayerParams& g, double scale = 1.0) {
  acc.A += scale * g.A;
  acc.W += scale * g.W;
  acc.b += scale * g.b;
}

/// Accumulates the data-term gradient of one sample into `grad`; returns the
/// sample's squared error.
inline double accumulate_sample(const Sample& s, const ParamList& params, const NetworkConfig& cfg,
                                double weight, ParamGradient& grad, double& max_defect) {
  const ForwardResult fwd = network_forward(s.input, params, cfg);
  max_defect = worst_defect(max_defect, defect(cfg.manifold, fwd.output));
  const State residual = fwd.output - s.target.value();
  const double err = residual.squaredNorm();
  const double dt = cfg.dt();
  const auto& states = fwd.trace.states;

  if (const auto* layers = std::get_if<ManifoldParamList>(&params)) {
    auto& acc = std::get<ManifoldParamList>(grad);
    State cot = (2.0 * weight) * residual;
    for (std::size_t n = layers->size(); n-- > 0;) {
      auto v = manifold_layer_vjp(states[n], (*layers)[n], fwd.trace.manifold_layers[n], cfg.generators, dt, cot);
      add_to(acc[n], v.grad);
      cot = std::move(v.input_cotangent);
    }
  } else {
    const auto& cl = std::get<ClassicalParamList>(params);
    auto& acc = std::get<ClassicalParamList>(grad);
    Eigen::VectorXd cot = flatten_state((2.0 * weight) * residual);
    for (std::size_t n = cl.size(); n-- > 0;) {
      auto v = classical_layer_vjp(flatten_state(states[n]), cl[n], dt, cot);
      add_to(acc[n], v.grad);
      cot = std::move(v.input_cotangent);
    }
  }
  return err;
}

}  // namespace detail

/// (lambda dt / 2) sum_N ||Theta_N||^2.
inline double regularizer(const ParamList& params, double lambda, double dt) {
  double s = 0.0;
  std::visit(
      [&](const auto& layers) {
        for (const auto& l : layers) s += squared_norm(l);
      },
      params);
  return 0.5 * lambda * dt * s;
}

struct LossAndGradient {
  double loss = 0.0;
  ParamGradient grad;
  double max_output_defect = 0.0;  // over the batch's predictions
};

/// (1/P) sum_j ||x_M^j - y^j||^2 + regularizer, and its exact gradient.
/// Per-sample contributions are reduced in sample order, so the result is
/// deterministic.
inline LossAndGradient network_gradient(std::span<const Sample> batch, const ParamList& params,
                                        const NetworkConfig& cfg, double lambda) {
  if (batch.empty()) throw InvalidConfig("empty batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  const double dt = cfg.dt();

  LossAndGradient r{0.0, zero_params(cfg)};
  double data = 0.0;
  for (const auto& s : batch) data += detail::accumulate_sample(s, params, cfg, weight, r.grad, r.max_output_defect);
  r.loss = weight * data + regularizer(params, lambda, dt);

  std::visit(
      [&](auto& acc) {
        const auto& ps = std::get<std::decay_t<decltype(acc)>>(params);
        for (std::size_t n = 0; n < acc.size(); ++n) detail::add_to(acc[n], ps[n], lambda * dt);
      },
      r.grad);
  return r;
}

/// Loss alone (no backward pass).
inline double network_loss(std::span<const Sample> batch, const ParamList& params, const NetworkConfig& cfg,
                           double lambda) {
  if (batch.empty()) throw InvalidConfig("empty batch");
  double data = 0.0;
  for (const auto& s : batch) data += (predict(s.input, params, cfg) - s.target.value()).squaredNorm();
  return data / static_cast<double>(batch.size()) + regularizer(params, lambda, cfg.dt());
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-10) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::vector<double> rel_errors;  // one per scalar parameter
};

/// Central differences of an arbitrary objective against a supplied gradient.
inline FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& objective,
                                          std::span<const double> theta, std::span<const double> gradient,
                                          double step = 1e-6) {
  if (!(step >= 1e-8 && step <= 1e-3)) throw InvalidConfig("finite-difference step must be in [1e-8, 1e-3]");
  std::vector<double> probe(theta.begin(), theta.end());
  FiniteDiffReport rep;
  rep.rel_errors.reserve(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    probe[k] = theta[k] + step;
    const double up = objective(probe);
    probe[k] = theta[k] - step;
    const double down = objective(probe);
    probe[k] = theta[k];
    const double e = relative_error((up - down) / (2.0 * step), gradient[k]);
    rep.rel_errors.push_back(e);
    rep.max_rel_error = std::max(rep.max_rel_error, e);
  }
  return rep;
}

/// Checks network_gradient against central differences of network_loss on
/// every scalar parameter.
inline FiniteDiffReport finite_diff_check(const ParamList& params, const NetworkConfig& cfg,
                                          std::span<const Sample> batch, double lambda, double step = 1e-6) {
  const auto analytic = flatten(network_gradient(batch, params, cfg, lambda).grad);
  const auto theta = flatten(params);
  auto objective = [&](std::span<const double> t) { return network_loss(batch, unflatten(cfg, t), cfg, lambda); };
  return finite_diff_check(objective, theta, analytic, step);
}

}  // namespace mnode
