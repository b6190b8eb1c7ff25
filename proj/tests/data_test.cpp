#include "mnode/data.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "mnode/lie.hpp"

namespace mnode {
namespace {

namespace fs = std::filesystem;

ManifoldPoint flow(Experiment exp, const ManifoldPoint& x0, int log2_steps) {
  return ground_truth_flow(x0, GroundTruthODE{exp}, 1 << log2_steps);
}

double gap(const ManifoldPoint& a, const ManifoldPoint& b) { return (a.value() - b.value()).norm(); }

TEST(Exp1Field, Examples) {
  EXPECT_EQ(exp1_field(Vec3::UnitX()), Vec3::Zero());
  EXPECT_EQ(exp1_field(Vec3::UnitY()), Vec3(-1, 0, 0));
  // x2 B1 x + x3 B3 x written out.
  const Vec3 x(0.2, -0.6, 0.4);
  EXPECT_LE((exp1_field(x) - (x(1) * basis_b1() * x + x(2) * basis_b3() * x)).norm(), 1e-16);
}

TEST(Exp1Field, Tangent) {
  SampleStream rng(RngSeed{1});
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = sample_uniform(ManifoldKind::Sphere2, rng).as_vec3();
    EXPECT_LE(std::abs(x.dot(exp1_field(x))), 1e-15);
  }
}

TEST(Exp2Field, Examples) {
  const Mat3 sum = basis_b1() + basis_b2() + basis_b3();
  EXPECT_EQ(exp2_field(Mat3::Identity()), 6.0 * sum);

  const Mat3 half_turn = expm_skew3({0, 0, std::numbers::pi});
  EXPECT_NEAR(exp2_generator(half_turn).omega(0), 6.0, 1e-14);
}

TEST(Exp2Field, Tangent) {
  SampleStream rng(RngSeed{2});
  for (int i = 0; i < 200; ++i) {
    const Mat3 x = sample_uniform(ManifoldKind::SO3, rng).as_mat3();
    // Tangent at X means X^T V is skew.
    const Mat3 m = x.transpose() * exp2_field(x);
    EXPECT_LE((m + m.transpose()).norm(), 1e-13 * (1.0 + m.norm()));
  }
}

TEST(GroundTruthFlow, ZeroFieldKeepsPoint) {
  // The field vanishes at e1.
  const auto e3 = ManifoldPoint::sphere(Vec3::UnitZ());
  EXPECT_EQ(exp1_generator(Vec3::UnitX()).omega, Vec3::Zero());
  for (int k : {0, 3, 10}) EXPECT_EQ(flow(Experiment::Exp1, ManifoldPoint::sphere(Vec3::UnitX()), k).as_vec3(), Vec3::UnitX());
  EXPECT_GT(gap(flow(Experiment::Exp1, e3, 4), e3), 0.1);  // e3 is not an equilibrium
}

TEST(GroundTruthFlow, DefectIndependentOfSteps) {
  SampleStream rng(RngSeed{3});
  for (int k : {0, 2, 6, 12}) {
    for (auto exp : {Experiment::Exp1, Experiment::Exp2}) {
      const auto y = flow(exp, sample_uniform(manifold_of(exp), rng), k);
      EXPECT_LE(defect(y), 1e-12) << "steps 2^" << k;
    }
  }
}

TEST(GroundTruthFlow, RejectsBadInputs) {
  EXPECT_THROW(ground_truth_flow(ManifoldPoint::sphere(Vec3(0, 2, 0)), GroundTruthODE{Experiment::Exp1}, 4),
               OffManifold);
  EXPECT_THROW(ground_truth_flow(ManifoldPoint::sphere(Vec3::UnitX()), GroundTruthODE{Experiment::Exp1}, 0),
               InvalidConfig);
  EXPECT_THROW(ground_truth_flow(ManifoldPoint::sphere(Vec3::UnitX()), GroundTruthODE{Experiment::Exp2}, 4),
               InvalidConfig);
}

TEST(GroundTruthFlow, StepDoublingChangesOutputBy1e9) {
  const auto x0 = ManifoldPoint::sphere(Vec3::UnitY());
  EXPECT_LE(gap(flow(Experiment::Exp1, x0, 13), flow(Experiment::Exp1, x0, 14)), 1e-9);
}

TEST(GroundTruthFlow, MatchesFineReferenceWithin1e8) {
  const auto x0 = ManifoldPoint::sphere(Vec3::UnitY());
  EXPECT_LE(gap(flow(Experiment::Exp1, x0, 14), flow(Experiment::Exp1, x0, 17)), 1e-8);
}

TEST(GroundTruthFlow, FirstOrderConvergence) {
  SampleStream rng(RngSeed{4});
  for (auto exp : {Experiment::Exp1, Experiment::Exp2}) {
    const auto x0 = exp == Experiment::Exp1 ? ManifoldPoint::sphere(Vec3::UnitY()) : sample_uniform(ManifoldKind::SO3, rng);
    std::vector<ManifoldPoint> ys;
    for (int k = 10; k <= 13; ++k) ys.push_back(flow(exp, x0, k));
    for (std::size_t i = 0; i + 2 < ys.size(); ++i) {
      const double ratio = gap(ys[i], ys[i + 1]) / gap(ys[i + 1], ys[i + 2]);
      EXPECT_GE(ratio, 1.7) << to_string(exp);
      EXPECT_LE(ratio, 2.3) << to_string(exp);
    }
  }
}

TEST(GroundTruthFlow, RichardsonExtrapolantsAgree) {
  // 2 y_h - y_2h cancels the leading error term, so the extrapolants from
  // (2^13, 2^14) and (2^16, 2^17) agree much more tightly than the raw outputs.
  const auto x0 = ManifoldPoint::sphere(Vec3::UnitY());
  auto extrapolate = [&](int k) {
    return State(2.0 * flow(Experiment::Exp1, x0, k + 1).value() - flow(Experiment::Exp1, x0, k).value());
  };
  EXPECT_LE((extrapolate(13) - extrapolate(16)).norm(), 1e-8);
}

TEST(Dataset, SinglePair) {
  const auto [train, test] = generate_dataset(Experiment::Exp1, 1, 1, 5, 1 << 10);
  ASSERT_EQ(train.size(), 1u);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_LE(max_defect(train), 1e-10);
  EXPECT_EQ(train.meta.split, "train");
  EXPECT_EQ(test.meta.steps, 1 << 10);
  EXPECT_EQ(test.meta.horizon, 1.0);
  EXPECT_NE(train.pairs[0].input, test.pairs[0].input);
}

TEST(Dataset, DeterministicAndOnManifold) {
  const auto a = generate_dataset(Experiment::Exp2, 20, 20, 99, 1 << 10);
  const auto b = generate_dataset(Experiment::Exp2, 20, 20, 99, 1 << 10);
  EXPECT_EQ(to_json(a.first).dump(), to_json(b.first).dump());
  EXPECT_EQ(to_json(a.second).dump(), to_json(b.second).dump());
  EXPECT_LE(max_defect(a.first), 1e-10);
  EXPECT_LE(max_defect(a.second), 1e-10);
  EXPECT_EQ(a.first.kind, ManifoldKind::SO3);
}

TEST(Dataset, DefaultStepsTargetsOnManifold) {
  const auto [train, test] = generate_dataset(Experiment::Exp1, 5, 5, 3);
  EXPECT_EQ(train.meta.steps, kDefaultFlowSteps);
  EXPECT_LE(std::max(max_defect(train), max_defect(test)), 1e-10);
  EXPECT_THROW(generate_dataset(Experiment::Exp1, 0, 5, 3), InvalidConfig);
}

class DatasetFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mnode_data_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(DatasetFiles, JsonRoundTripIsBitwise) {
  for (auto exp : {Experiment::Exp1, Experiment::Exp2}) {
    const auto d = generate_dataset(exp, 10, 1, 7, 1 << 8).first;
    const auto path = dir_ / "d.json";
    save_dataset(d, path);
    const auto back = load_dataset(path);
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_EQ(back.pairs[i].input, d.pairs[i].input);
      EXPECT_EQ(back.pairs[i].target, d.pairs[i].target);
    }
    EXPECT_EQ(back.meta.seed, 7u);
    EXPECT_EQ(back.meta.ode, exp);
    EXPECT_EQ(read_text(path), to_json(back).dump(1) + "\n");
  }
}

TEST_F(DatasetFiles, MalformedFilesRaiseIoError) {
  write_text(dir_ / "bad.json", "{not json");
  EXPECT_THROW(load_dataset(dir_ / "bad.json"), IoError);
  write_text(dir_ / "other.json", R"({"format":"something"})");
  EXPECT_THROW(load_dataset(dir_ / "other.json"), IoError);
  EXPECT_THROW(load_dataset(dir_ / "missing.json"), IoError);
}

TEST(DatasetCsv, HeaderAndRows) {
  const auto d = generate_dataset(Experiment::Exp1, 3, 1, 1, 1 << 6).first;
  std::istringstream in(to_csv(d));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x0_1,x0_2,x0_3,y_1,y_2,y_3");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
  }
  EXPECT_EQ(rows, 3);

  const auto r = generate_dataset(Experiment::Exp2, 1, 1, 1, 1 << 6).first;
  const std::string csv = to_csv(r);
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 17);
  EXPECT_TRUE(header.ends_with(",y_9"));
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) EXPECT_EQ(std::stod(format_double(v)), v);
}

}  // namespace
}  // namespace mnode
