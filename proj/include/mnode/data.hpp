#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnode/errors.hpp"
#include "mnode/linalg.hpp"
#include "mnode/manifold.hpp"
#include "mnode/network.hpp"

namespace mnode {

/// The two benchmark problems: Exp1 lives on S^2, Exp2 on SO(3).
enum class Experiment { Exp1, Exp2 };

inline std::string_view to_string(Experiment e) { return e == Experiment::Exp1 ? "exp1" : "exp2"; }

inline Experiment experiment_from_string(std::string_view s) {
  if (s == "exp1") return Experiment::Exp1;
  if (s == "exp2") return Experiment::Exp2;
  throw InvalidConfig("unknown experiment '" + std::string(s) + "'");
}

inline ManifoldKind manifold_of(Experiment e) {
  return e == Experiment::Exp1 ? ManifoldKind::Sphere2 : ManifoldKind::SO3;
}

inline Experiment experiment_of(ManifoldKind k) {
  return k == ManifoldKind::Sphere2 ? Experiment::Exp1 : Experiment::Exp2;
}

inline constexpr int kDefaultFlowSteps = 1 << 14;

// ---------------------------------------------------------------------------
// Ground-truth vector fields. Both are of the form x -> Omega(x) x with Omega
// skew, which is what the exponential Euler integrator consumes.

/// Exp1: x2 * B1 x + x3 * B3 x.
inline AxialVector exp1_generator(const Vec3& x) { return AxialVector(x(2), 0.0, x(1)); }

/// Exp2: Tr(X^2 + I) * (B1 + B2 + B3) X.
inline AxialVector exp2_generator(const Mat3& x) {
  const double c = (x * x).trace() + 3.0;
  return AxialVector(c, c, c);
}

inline Vec3 exp1_field(const Vec3& x) { return skew_from_axial(exp1_generator(x)) * x; }

inline Mat3 exp2_field(const Mat3& x) { return skew_from_axial(exp2_generator(x)) * x; }

/// The target map's generating ODE for an experiment.
struct GroundTruthODE {
  Experiment id = Experiment::Exp1;

  AxialVector generator_at(const State& x) const {
    return id == Experiment::Exp1 ? exp1_generator(x.col(0)) : exp2_generator(Mat3(x));
  }
  State field(const State& x) const { return skew_from_axial(generator_at(x)) * x; }
};

/// Time-one map by exponential Euler: freeze Omega(x) at the current state and
/// advance along exp(h Omega).
inline ManifoldPoint ground_truth_flow(const ManifoldPoint& x0, const GroundTruthODE& ode, int steps) {
  if (steps < 1) throw InvalidConfig("flow needs at least one step");
  if (x0.kind() != manifold_of(ode.id)) throw InvalidConfig("ODE and point live on different manifolds");
  require_on_manifold(x0);
  const double h = 1.0 / static_cast<double>(steps);
  State x = x0.value();
  for (int k = 0; k < steps; ++k) {
    const AxialVector w(h * ode.generator_at(x).omega);
    x = expm_skew3(w) * x;
  }
  return {x0.kind(), std::move(x)};
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetMeta {
  std::uint64_t seed = 0;
  Experiment ode = Experiment::Exp1;
  int steps = kDefaultFlowSteps;
  double horizon = 1.0;
  std::string split;  // "train" / "test"
};

struct Dataset {
  ManifoldKind kind = ManifoldKind::Sphere2;
  std::vector<Sample> pairs;
  DatasetMeta meta;

  std::size_t size() const { return pairs.size(); }
};

/// Largest defect over every input and target.
inline double max_defect(const Dataset& d) {
  double worst = 0.0;
  for (const auto& s : d.pairs) worst = std::max({worst, defect(s.input), defect(s.target)});
  return worst;
}

inline Dataset make_dataset(Experiment exp, std::size_t count, SampleStream& rng, std::uint64_t seed, int steps,
                            std::string split) {
  const ManifoldKind kind = manifold_of(exp);
  const GroundTruthODE ode{exp};
  Dataset d{kind, {}, {seed, exp, steps, 1.0, std::move(split)}};
  d.pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ManifoldPoint x0 = sample_uniform(kind, rng);
    ManifoldPoint y = ground_truth_flow(x0, ode, steps);
    d.pairs.push_back({std::move(x0), std::move(y)});
  }
  return d;
}

/// Train and test sets from independent uniform draws of one seeded stream
/// (train inputs first).
inline std::pair<Dataset, Dataset> generate_dataset(Experiment exp, std::size_t p_train, std::size_t p_test,
                                                    std::uint64_t seed, int steps = kDefaultFlowSteps) {
  if (p_train < 1 || p_test < 1) throw InvalidConfig("dataset sizes must be >= 1");
  SampleStream rng(RngSeed{seed});
  Dataset train = make_dataset(exp, p_train, rng, seed, steps, "train");
  Dataset test = make_dataset(exp, p_test, rng, seed, steps, "test");
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Serialization. States are written row major (3 or 9 numbers).

inline std::vector<double> state_to_row(const State& x) {
  const Eigen::VectorXd v = flatten_state(x);
  return {v.data(), v.data() + v.size()};
}

inline State state_from_row(ManifoldKind kind, const std::vector<double>& row) {
  if (row.size() != static_cast<std::size_t>(3 * state_cols(kind)))
    throw IoError("state row has wrong length " + std::to_string(row.size()));
  return unflatten_state(Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size())));
}

inline nlohmann::json to_json(const Dataset& d) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& s : d.pairs) pairs.push_back({{"x0", state_to_row(s.input.value())}, {"y", state_to_row(s.target.value())}});
  return {{"format", "mnode-dataset"},
          {"version", 1},
          {"metadata",
           {{"kind", to_string(d.kind)},
            {"ode", to_string(d.meta.ode)},
            {"seed", d.meta.seed},
            {"steps", d.meta.steps},
            {"horizon", d.meta.horizon},
            {"split", d.meta.split},
            {"count", d.pairs.size()}}},
          {"pairs", std::move(pairs)}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mnode-dataset") throw IoError("not a dataset file");
    const auto& m = j.at("metadata");
    Dataset d;
    d.kind = manifold_kind_from_string(m.at("kind").get<std::string>());
    d.meta.ode = experiment_from_string(m.at("ode").get<std::string>());
    d.meta.seed = m.at("seed").get<std::uint64_t>();
    d.meta.steps = m.at("steps").get<int>();
    d.meta.horizon = m.at("horizon").get<double>();
    d.meta.split = m.at("split").get<std::string>();
    for (const auto& p : j.at("pairs")) {
      d.pairs.push_back({ManifoldPoint(d.kind, state_from_row(d.kind, p.at("x0").get<std::vector<double>>())),
                         ManifoldPoint(d.kind, state_from_row(d.kind, p.at("y").get<std::vector<double>>()))});
    }
    if (d.pairs.empty()) throw IoError("dataset has no pairs");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed dataset: ") + e.what());
  }
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  write_text(path, to_json(d).dump(1) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return dataset_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// 17 significant digits, enough to round-trip any double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per pair: x0_1..x0_d, y_1..y_d (row-major state entries).
inline std::string to_csv(const Dataset& d) {
  const int dim = 3 * state_cols(d.kind);
  std::string out;
  for (int i = 1; i <= dim; ++i) out += "x0_" + std::to_string(i) + ",";
  for (int i = 1; i <= dim; ++i) out += "y_" + std::to_string(i) + (i == dim ? "\n" : ",");
  for (const auto& s : d.pairs) {
    const auto a = state_to_row(s.input.value());
    const auto b = state_to_row(s.target.value());
    for (double v : a) out += format_double(v) + ",";
    for (std::size_t i = 0; i < b.size(); ++i) out += format_double(b[i]) + (i + 1 == b.size() ? "\n" : ",");
  }
  return out;
}

}  // namespace mnode
