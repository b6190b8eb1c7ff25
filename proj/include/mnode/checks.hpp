#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnode/data.hpp"
#include "mnode/grad.hpp"
#include "mnode/lie.hpp"
#include "mnode/linalg.hpp"
#include "mnode/network.hpp"

namespace mnode {

/// One measured quantity compared against a bound.
struct CheckItem {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct CheckReport {
  std::string suite;
  std::vector<CheckItem> items;

  bool passed() const {
    return std::all_of(items.begin(), items.end(), [](const CheckItem& c) { return c.passed; });
  }
};

inline CheckItem at_most(std::string name, double value, double bound, std::string detail = {}) {
  return {std::move(name), value <= bound, value, bound, std::move(detail)};
}

inline CheckItem within(std::string name, double value, double lo, double hi) {
  char range[64];
  std::snprintf(range, sizeof range, "range [%g, %g]", lo, hi);
  return {std::move(name), value >= lo && value <= hi, value, hi, range};
}

inline CheckItem holds(std::string name, bool ok, std::string detail = {}) {
  return {std::move(name), ok, ok ? 1.0 : 0.0, 1.0, std::move(detail)};
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  for (double& x : v)
    if (std::isnan(x)) x = std::numeric_limits<double>::infinity();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Parameters twice as wide as the initializer's range, so gates spread out.
inline ParamList wide_random_params(const NetworkConfig& cfg, SampleStream& rng) {
  auto flat = flatten(init_params(cfg, rng));
  for (double& v : flat) v *= 2.0;
  return unflatten(cfg, flat);
}

// ---------------------------------------------------------------------------
// Suites

/// Worst output defect of the manifold network over random parameters,
/// inputs and depths up to `max_layers`.
inline double manifold_invariance_defect(ManifoldKind kind, int trials, int max_layers, SampleStream& rng) {
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const int m = 1 + static_cast<int>(rng.engine()() % static_cast<std::uint64_t>(max_layers));
    const auto cfg = make_config(ModelKind::Manifold, kind, m);
    worst = std::max(worst, defect(kind, predict(sample_uniform(kind, rng), wide_random_params(cfg, rng), cfg)));
  }
  return worst;
}

inline CheckReport check_invariants(std::uint64_t seed) {
  SampleStream rng(RngSeed{seed});
  CheckReport r{"invariants", {}};
  r.items.push_back(at_most("sphere2_output_defect", manifold_invariance_defect(ManifoldKind::Sphere2, 1000, 64, rng), 1e-10,
                            "1000 random nets, M <= 64"));
  r.items.push_back(at_most("so3_output_defect", manifold_invariance_defect(ManifoldKind::SO3, 1000, 64, rng), 1e-9,
                            "1000 random nets, M <= 64"));
  r.items.push_back(at_most("sphere2_generator_tangency", max_tangency_defect(sphere_generators(), rng, 1000), 1e-12));
  r.items.push_back(at_most("so3_generator_tangency", max_tangency_defect(so3_generators(), rng, 1000), 1e-12));
  const bool counts = param_count(make_config(ModelKind::Manifold, ManifoldKind::Sphere2, 1)) == 10 &&
                      param_count(make_config(ModelKind::Classical, ManifoldKind::Sphere2, 1)) == 21 &&
                      param_count(make_config(ModelKind::Manifold, ManifoldKind::SO3, 1)) == 33 &&
                      param_count(make_config(ModelKind::Classical, ManifoldKind::SO3, 1)) == 171;
  r.items.push_back(holds("param_counts_10_21_33_171", counts));
  return r;
}

/// Central-difference step for the gradient check.
inline constexpr double kGradcheckStep = 1e-4;

/// Relative finite-difference errors of the exact gradient over `trials`
/// configurations cycling through model kind, manifold and M in {1,2,4}.
inline std::vector<double> gradcheck_errors(int trials, SampleStream& rng) {
  std::vector<double> worst;
  for (int t = 0; t < trials; ++t) {
    const auto model = t % 2 ? ModelKind::Classical : ModelKind::Manifold;
    const auto kind = (t / 2) % 2 ? ManifoldKind::SO3 : ManifoldKind::Sphere2;
    const auto cfg = make_config(model, kind, 1 << ((t / 4) % 3));
    std::vector<Sample> batch;
    for (int j = 0; j < 4; ++j) batch.push_back({sample_uniform(kind, rng), sample_uniform(kind, rng)});
    worst.push_back(finite_diff_check(wide_random_params(cfg, rng), cfg, batch, 1e-3, kGradcheckStep).max_rel_error);
  }
  return worst;
}

inline CheckReport check_gradcheck(std::uint64_t seed) {
  SampleStream rng(RngSeed{seed});
  const auto errs = gradcheck_errors(50, rng);
  return {"gradcheck",
          {at_most("max_rel_error", *std::max_element(errs.begin(), errs.end()), 1e-4, "50 random configurations"),
           at_most("median_rel_error", median_of(errs), 1e-6)}};
}

inline CheckReport check_bracket(std::uint64_t seed) {
  SampleStream rng(RngSeed{seed});
  const auto s2 = sphere_generators();
  CheckReport r{"bracket", {}};
  r.items.push_back(holds("bracket_g1_g2_is_B3", lie_bracket_linear(s2.fields[0], s2.fields[1]).matrix == basis_b3()));
  int ok = 0;
  for (int i = 0; i < 1000; ++i) ok += bracket_generating_at(s2, sample_uniform(ManifoldKind::Sphere2, rng), 1);
  r.items.push_back(holds("sphere2_bracket_generating_depth1", ok == 1000, std::to_string(ok) + "/1000 points"));
  ok = 0;
  for (int i = 0; i < 100; ++i) ok += bracket_generating_at(so3_generators(), sample_uniform(ManifoldKind::SO3, rng), 0);
  r.items.push_back(holds("so3_bracket_generating_depth0", ok == 100, std::to_string(ok) + "/100 points"));
  return r;
}

/// Worst Frobenius gap between Rodrigues and the dense exponential.
inline double rodrigues_vs_dense(int trials, double max_norm, SampleStream& rng) {
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const AxialVector w(dir * rng.uniform(0.0, max_norm));
    worst = std::max(worst, (expm_skew3(w) - expm_dense(skew_from_axial(w))).norm());
  }
  return worst;
}

/// Largest jump of expm_skew3 between adjacent doubles around the switch.
inline double small_angle_jump() {
  const double below = std::nextafter(kSmallAngle, 0.0);
  double worst = 0.0;
  for (const Vec3 axis : {Vec3(0, 0, 1), Vec3(1, 2, -2).normalized(), Vec3(1, 1, 1).normalized()})
    worst = std::max(worst, (expm_skew3(AxialVector(below * axis)) - expm_skew3(AxialVector(kSmallAngle * axis))).norm());
  return worst;
}

/// Ratios |y(2^k) - y(2^{k+1})| / |y(2^{k+1}) - y(2^{k+2})| for k = 10, 11.
inline std::vector<double> step_halving_ratios(Experiment exp, const ManifoldPoint& x0) {
  const GroundTruthODE ode{exp};
  std::vector<State> ys;
  for (int k = 10; k <= 13; ++k) ys.push_back(ground_truth_flow(x0, ode, 1 << k).value());
  std::vector<double> ratios;
  for (std::size_t i = 0; i + 2 < ys.size(); ++i)
    ratios.push_back((ys[i] - ys[i + 1]).norm() / (ys[i + 1] - ys[i + 2]).norm());
  return ratios;
}

inline CheckReport check_integrator(std::uint64_t seed) {
  SampleStream rng(RngSeed{seed});
  CheckReport r{"integrator", {}};
  r.items.push_back(at_most("rodrigues_vs_dense", rodrigues_vs_dense(1000, 5.0, rng), 1e-12, "1000 random |w| <= 5"));
  r.items.push_back(at_most("small_angle_branch_jump", small_angle_jump(), 1e-12));
  for (auto exp : {Experiment::Exp1, Experiment::Exp2}) {
    const auto x0 = exp == Experiment::Exp1 ? ManifoldPoint::sphere(Vec3::UnitY()) : sample_uniform(ManifoldKind::SO3, rng);
    const auto ratios = step_halving_ratios(exp, x0);
    for (std::size_t i = 0; i < ratios.size(); ++i)
      r.items.push_back(within(std::string(to_string(exp)) + "_halving_ratio_" + std::to_string(10 + i), ratios[i], 1.7, 2.3));
    double worst = 0.0;
    for (int i = 0; i < 20; ++i)
      worst = std::max(worst, defect(ground_truth_flow(sample_uniform(manifold_of(exp), rng), GroundTruthODE{exp}, 1 << 12)));
    r.items.push_back(at_most(std::string(to_string(exp)) + "_flow_defect", worst, 1e-10));
  }
  return r;
}

inline const std::vector<std::string>& check_suites() {
  static const std::vector<std::string> names{"invariants", "gradcheck", "bracket", "integrator"};
  return names;
}

inline CheckReport run_check(const std::string& suite, std::uint64_t seed) {
  if (suite == "invariants") return check_invariants(seed);
  if (suite == "gradcheck") return check_gradcheck(seed);
  if (suite == "bracket") return check_bracket(seed);
  if (suite == "integrator") return check_integrator(seed);
  throw InvalidConfig("unknown check suite '" + suite + "'");
}

inline nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& c : r.items)
    items.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"threshold", c.threshold}, {"detail", c.detail}});
  return {{"suite", r.suite}, {"passed", r.passed()}, {"items", std::move(items)}};
}

}  // namespace mnode
