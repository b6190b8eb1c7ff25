#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mnode/errors.hpp"
#include "mnode/lie.hpp"
#include "mnode/linalg.hpp"
#include "mnode/manifold.hpp"

namespace mnode {

enum class ModelKind { Manifold, Classical };

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::Manifold ? "manifold" : "classical";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "manifold") return ModelKind::Manifold;
  if (s == "classical") return ModelKind::Classical;
  throw InvalidConfig("unknown model kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Activations

/// Logistic sigmoid, evaluated without overflow for any finite z.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Eigen::VectorXd vec_activation(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Parameters

/// (a_i, w_i, b_i) for one generator. w_i has the shape of the state.
struct GeneratorWeights {
  double gain = 0.0;
  State weight;
  double bias = 0.0;
};

struct ManifoldLayerParams {
  std::vector<GeneratorWeights> terms;  // one per generator
};

struct ClassicalLayerParams {
  Eigen::MatrixXd A;
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

using ManifoldParamList = std::vector<ManifoldLayerParams>;
using ClassicalParamList = std::vector<ClassicalLayerParams>;

/// All layer parameters of a network. Gradients use the same type.
using ParamList = std::variant<ManifoldParamList, ClassicalParamList>;

struct NetworkConfig {
  ModelKind model = ModelKind::Manifold;
  ManifoldKind manifold = ManifoldKind::Sphere2;
  int layers = 1;
  GeneratorSet generators;  // used by the manifold model only

  /// Step size; always 1 / layers.
  double dt() const { return 1.0 / static_cast<double>(layers); }
  int state_cols() const { return mnode::state_cols(manifold); }
  /// Flattened state dimension seen by the classical model.
  int state_dim() const { return 3 * state_cols(); }
};

inline NetworkConfig make_config(ModelKind model, ManifoldKind manifold, int layers) {
  return {model, manifold, layers, default_generators(manifold)};
}

inline void validate(const NetworkConfig& cfg) {
  if (cfg.layers < 1) throw InvalidConfig("network needs at least one layer");
  if (cfg.model != ModelKind::Manifold) return;
  if (cfg.generators.fields.empty()) throw InvalidConfig("manifold network needs generators");
  if (cfg.generators.kind != cfg.manifold) throw InvalidConfig("generator set is for a different manifold");
  for (const auto& g : cfg.generators.fields)
    if (!is_skew(g.matrix, 1e-12 * (1.0 + g.matrix.norm())))
      throw InvalidConfig("generator " + g.id + " is not skew-symmetric");
}

/// Scalars per layer: m(2 + 3k) for the manifold model, 2d^2 + d for the
/// classical one (d = 3k).
inline std::size_t params_per_layer(const NetworkConfig& cfg) {
  const auto k = static_cast<std::size_t>(cfg.state_cols());
  if (cfg.model == ModelKind::Manifold) return cfg.generators.size() * (2 + 3 * k);
  const auto d = 3 * k;
  return 2 * d * d + d;
}

inline std::size_t param_count(const NetworkConfig& cfg) {
  return params_per_layer(cfg) * static_cast<std::size_t>(cfg.layers);
}

/// Uniform(-0.5, 0.5) for every manifold weight; the classical weights get
/// the same draw scaled by 1/sqrt(d).
inline ParamList init_params(const NetworkConfig& cfg, SampleStream& rng) {
  auto u = [&] { return rng.uniform(-0.5, 0.5); };
  if (cfg.model == ModelKind::Manifold) {
    ManifoldParamList layers(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : layers) {
      layer.terms.resize(cfg.generators.size());
      for (auto& t : layer.terms) {
        t.gain = u();
        t.weight = State(3, cfg.state_cols());
        for (Eigen::Index i = 0; i < t.weight.size(); ++i) t.weight.data()[i] = u();
        t.bias = u();
      }
    }
    return layers;
  }
  const int d = cfg.state_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  ClassicalParamList layers(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : layers) {
    layer.A.resize(d, d);
    layer.W.resize(d, d);
    layer.b.resize(d);
    for (Eigen::Index i = 0; i < layer.A.size(); ++i) layer.A.data()[i] = scale * u();
    for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = scale * u();
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b.data()[i] = scale * u();
  }
  return layers;
}

/// A zero-valued parameter list of the configured shape.
inline ParamList zero_params(const NetworkConfig& cfg) {
  if (cfg.model == ModelKind::Manifold) {
    ManifoldParamList layers(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : layers) {
      layer.terms.resize(cfg.generators.size());
      for (auto& t : layer.terms) t.weight = State::Zero(3, cfg.state_cols());
    }
    return layers;
  }
  const int d = cfg.state_dim();
  ClassicalParamList layers(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : layers) {
    layer.A = Eigen::MatrixXd::Zero(d, d);
    layer.W = Eigen::MatrixXd::Zero(d, d);
    layer.b = Eigen::VectorXd::Zero(d);
  }
  return layers;
}

// Flat packing. Order per manifold layer: for each generator a, w (column
// major), b. Per classical layer: A, W (column major), b.

inline std::vector<double> flatten(const ParamList& params) {
  std::vector<double> out;
  auto put = [&](const double* p, Eigen::Index n) { out.insert(out.end(), p, p + n); };
  std::visit(
      [&](const auto& layers) {
        for (const auto& layer : layers) {
          if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, ManifoldLayerParams>) {
            for (const auto& t : layer.terms) {
              out.push_back(t.gain);
              put(t.weight.data(), t.weight.size());
              out.push_back(t.bias);
            }
          } else {
            put(layer.A.data(), layer.A.size());
            put(layer.W.data(), layer.W.size());
            put(layer.b.data(), layer.b.size());
          }
        }
      },
      params);
  return out;
}

inline ParamList unflatten(const NetworkConfig& cfg, std::span<const double> flat) {
  if (flat.size() != param_count(cfg))
    throw InvalidConfig("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                        std::to_string(param_count(cfg)));
  ParamList out = zero_params(cfg);
  std::size_t pos = 0;
  auto take = [&](double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = flat[pos++];
  };
  std::visit(
      [&](auto& layers) {
        for (auto& layer : layers) {
          if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, ManifoldLayerParams>) {
            for (auto& t : layer.terms) {
              t.gain = flat[pos++];
              take(t.weight.data(), t.weight.size());
              t.bias = flat[pos++];
            }
          } else {
            take(layer.A.data(), layer.A.size());
            take(layer.W.data(), layer.W.size());
            take(layer.b.data(), layer.b.size());
          }
        }
      },
      out);
  return out;
}

/// Sum of squares of every scalar in one layer.
inline double squared_norm(const ManifoldLayerParams& p) {
  double s = 0.0;
  for (const auto& t : p.terms) s += t.gain * t.gain + t.weight.squaredNorm() + t.bias * t.bias;
  return s;
}

inline double squared_norm(const ClassicalLayerParams& p) {
  return p.A.squaredNorm() + p.W.squaredNorm() + p.b.squaredNorm();
}

/// Number of layers held by a parameter list.
inline std::size_t layer_count(const ParamList& params) {
  return std::visit([](const auto& l) { return l.size(); }, params);
}

// ---------------------------------------------------------------------------
// State flattening for the classical model (row major, so a rotation matrix
// becomes its rows laid end to end).

inline Eigen::VectorXd flatten_state(const State& x) {
  Eigen::VectorXd v(x.size());
  const Eigen::Index cols = x.cols();
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) v(r * cols + c) = x(r, c);
  return v;
}

inline State unflatten_state(const Eigen::VectorXd& v) {
  const Eigen::Index cols = v.size() / 3;
  State x(3, cols);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) x(r, c) = v(r * cols + c);
  return x;
}

// ---------------------------------------------------------------------------
// Forward passes

/// What one manifold layer records for the backward pass.
struct ManifoldLayerTape {
  Eigen::VectorXd pre_activation;  // z_i = <w_i, x> + b_i
  Eigen::VectorXd gate;            // sigma(z_i)
  AxialVector omega;               // dt * sum_i a_i sigma(z_i) beta_i
  Mat3 rotation;                   // expm_skew3(omega)
};

struct ClassicalLayerTape {
  Eigen::VectorXd pre_activation;  // W x + b
  Eigen::VectorXd gate;            // Sigma(W x + b)
};

namespace detail {

inline std::vector<Vec3> generator_axes(const GeneratorSet& gens) {
  std::vector<Vec3> axes;
  axes.reserve(gens.size());
  for (const auto& g : gens.fields) axes.push_back(axial_from_skew(g.matrix).omega);
  return axes;
}

inline State manifold_step(const State& x, const ManifoldLayerParams& p, const std::vector<Vec3>& axes,
                           double dt, ManifoldLayerTape& tape) {
  const auto m = static_cast<Eigen::Index>(p.terms.size());
  tape.pre_activation.resize(m);
  tape.gate.resize(m);
  Vec3 omega = Vec3::Zero();
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& t = p.terms[static_cast<std::size_t>(i)];
    const double z = frobenius_inner(t.weight, x) + t.bias;
    const double s = sigmoid(z);
    tape.pre_activation(i) = z;
    tape.gate(i) = s;
    omega += (dt * t.gain * s) * axes[static_cast<std::size_t>(i)];
  }
  tape.omega = AxialVector(omega);
  tape.rotation = expm_skew3(tape.omega);
  return tape.rotation * x;
}

inline Eigen::VectorXd classical_step(const Eigen::VectorXd& x, const ClassicalLayerParams& p, double dt,
                                      ClassicalLayerTape& tape) {
  tape.pre_activation = p.W * x + p.b;
  tape.gate = vec_activation(tape.pre_activation);
  return x + dt * (p.A * tape.gate);
}

}  // namespace detail

struct ManifoldLayerResult {
  ManifoldPoint output;
  ManifoldLayerTape tape;
};

/// x -> exp(dt * sum_i a_i sigma(<w_i, x> + b_i) B_i) x.
inline ManifoldLayerResult manifold_layer_forward(const ManifoldPoint& x, const ManifoldLayerParams& p,
                                                  const NetworkConfig& cfg) {
  validate(cfg);
  require_on_manifold(x);
  if (p.terms.size() != cfg.generators.size()) throw InvalidConfig("layer/generator count mismatch");
  ManifoldLayerTape tape;
  State y = detail::manifold_step(x.value(), p, detail::generator_axes(cfg.generators), cfg.dt(), tape);
  return {ManifoldPoint(x.kind(), std::move(y)), std::move(tape)};
}

/// x + dt * A Sigma(W x + b).
inline Eigen::VectorXd classical_layer_forward(const Eigen::VectorXd& x, const ClassicalLayerParams& p,
                                               double dt) {
  ClassicalLayerTape tape;
  return detail::classical_step(x, p, dt, tape);
}

/// Backprop tape of a full forward pass. Intermediate states are kept in
/// embedded 3xk form for both models.
struct ForwardTrace {
  std::vector<State> states;  // x_0 .. x_M
  std::vector<ManifoldLayerTape> manifold_layers;
  std::vector<ClassicalLayerTape> classical_layers;
};

struct ForwardResult {
  State output;
  ForwardTrace trace;
};

/// Runs all M layers from x0. The manifold model rejects an off-manifold x0;
/// the classical model accepts any state of the right shape.
inline ForwardResult network_forward(const ManifoldPoint& x0, const ParamList& params, const NetworkConfig& cfg) {
  validate(cfg);
  if (x0.kind() != cfg.manifold) throw InvalidConfig("input point is on a different manifold");
  if (layer_count(params) != static_cast<std::size_t>(cfg.layers))
    throw InvalidConfig("parameter list length does not match layer count");

  ForwardResult r;
  r.trace.states.reserve(static_cast<std::size_t>(cfg.layers) + 1);
  r.trace.states.push_back(x0.value());
  const double dt = cfg.dt();

  if (const auto* layers = std::get_if<ManifoldParamList>(&params)) {
    if (cfg.model != ModelKind::Manifold) throw InvalidConfig("manifold parameters for a classical config");
    require_on_manifold(x0);
    const auto axes = detail::generator_axes(cfg.generators);
    r.trace.manifold_layers.resize(layers->size());
    for (std::size_t n = 0; n < layers->size(); ++n) {
      if ((*layers)[n].terms.size() != axes.size()) throw InvalidConfig("layer/generator count mismatch");
      r.trace.states.push_back(
          detail::manifold_step(r.trace.states.back(), (*layers)[n], axes, dt, r.trace.manifold_layers[n]));
    }
  } else {
    if (cfg.model != ModelKind::Classical) throw InvalidConfig("classical parameters for a manifold config");
    const auto& cl = std::get<ClassicalParamList>(params);
    r.trace.classical_layers.resize(cl.size());
    Eigen::VectorXd x = flatten_state(x0.value());
    for (std::size_t n = 0; n < cl.size(); ++n) {
      x = detail::classical_step(x, cl[n], dt, r.trace.classical_layers[n]);
      r.trace.states.push_back(unflatten_state(x));
    }
  }
  r.output = r.trace.states.back();
  return r;
}

/// Forward pass without keeping the tape around.
inline State predict(const ManifoldPoint& x0, const ParamList& params, const NetworkConfig& cfg) {
  return network_forward(x0, params, cfg).output;
}

}  // namespace mnode
