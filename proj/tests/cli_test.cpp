#include "mnode/commands.hpp"

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

namespace mnode::cli {
namespace {

class CliFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("mnode_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  std::ostringstream log_;
};

GenDataOptions data_options(Experiment exp, std::size_t p, std::uint64_t seed) {
  GenDataOptions o;
  o.data.experiment = exp;
  o.data.p_train = p;
  o.data.p_test = p;
  o.data.seed = seed;
  return o;
}

TEST_F(CliFiles, GenDataSinglePair) {
  EXPECT_EQ(cmd_gen_data(data_options(Experiment::Exp1, 1, 3), dir_, log_), kOk);
  const auto d = load_dataset(dir_ / "train.json");
  EXPECT_EQ(d.size(), 1u);
  EXPECT_LE(max_defect(d), 1e-10);
  EXPECT_NE(log_.str().find("max defect"), std::string::npos);
}

TEST_F(CliFiles, GenDataIsDeterministic) {
  auto o = data_options(Experiment::Exp2, 4, 11);
  o.csv = true;
  cmd_gen_data(o, dir_ / "a", log_);
  cmd_gen_data(o, dir_ / "b", log_);
  for (const char* f : {"train.json", "test.json", "train.csv", "test.csv"})
    EXPECT_EQ(read_text(dir_ / "a" / f), read_text(dir_ / "b" / f)) << f;
}

TEST_F(CliFiles, GenDataExp2Hundred) {
  cmd_gen_data(data_options(Experiment::Exp2, 100, 1), dir_, log_);
  for (const char* f : {"train.json", "test.json"}) {
    const auto d = load_dataset(dir_ / f);
    EXPECT_EQ(d.size(), 100u);
    EXPECT_EQ(d.kind, ManifoldKind::SO3);
    EXPECT_LE(max_defect(d), 1e-10);
  }
}

TEST(GenDataConfig, Keys) {
  const auto o = gen_data_options_from_json({{"experiment", "exp2"}, {"p_train", 7}, {"csv", true}});
  EXPECT_EQ(o.data.experiment, Experiment::Exp2);
  EXPECT_EQ(o.data.p_train, 7u);
  EXPECT_TRUE(o.csv);
  EXPECT_THROW(gen_data_options_from_json({{"p_trian", 7}}), InvalidConfig);
  EXPECT_THROW(gen_data_options_from_json({{"experiment", "exp3"}}), InvalidConfig);
}

TrainOptions train_options(ModelKind model, int layers, std::uint64_t seed) {
  TrainOptions o;
  o.model = model;
  o.layers = layers;
  o.data.seed = seed;
  o.train.seed = seed;
  return o;
}

TEST_F(CliFiles, TrainOneEpochSmoke) {
  auto o = train_options(ModelKind::Manifold, 2, 1);
  o.data.p_train = o.data.p_test = 10;
  o.train.epochs = 1;
  const auto r = cmd_train(o, dir_, log_);
  EXPECT_EQ(r.exit_code, kOk);
  std::istringstream csv(read_text(dir_ / "metrics.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 2);  // header + one epoch
  const auto meta = json::parse(read_text(dir_ / "metadata.json"));
  EXPECT_EQ(meta.at("checkpoint"), "checkpoint.json");
  EXPECT_EQ(meta.at("config").at("train").at("epochs"), 1);
  EXPECT_EQ(meta.at("network").at("param_count"), 20);
  const auto ckpt = load_checkpoint(dir_ / "checkpoint.json");
  EXPECT_EQ(flatten(ckpt.params), flatten(r.run.params));
}

TEST_F(CliFiles, TrainFromDatasetFiles) {
  cmd_gen_data(data_options(Experiment::Exp2, 5, 2), dir_ / "data", log_);
  auto o = train_options(ModelKind::Classical, 1, 1);
  o.data.experiment = Experiment::Exp2;
  o.train_data = dir_ / "data" / "train.json";
  o.test_data = dir_ / "data" / "test.json";
  o.train.epochs = 2;
  o.train.lr0 = 0.1;
  EXPECT_EQ(cmd_train(o, dir_ / "run", log_).exit_code, kOk);

  o.test_data.clear();
  EXPECT_THROW(cmd_train(o, dir_ / "run2", log_), InvalidConfig);
  o.data.experiment = Experiment::Exp1;  // sphere net on rotation data
  o.test_data = dir_ / "data" / "test.json";
  EXPECT_THROW(cmd_train(o, dir_ / "run3", log_), InvalidConfig);
}

TEST_F(CliFiles, ManifoldExp1DefaultConfigStaysOnSphere) {
  const auto r = cmd_train(train_options(ModelKind::Manifold, 4, 1), dir_, log_);
  ASSERT_EQ(r.exit_code, kOk);
  ASSERT_EQ(r.final.epochs_run, 8000);
  // Last row's max_defect column.
  const std::string csv = read_text(dir_ / "metrics.csv");
  const auto last = csv.substr(csv.rfind('\n', csv.size() - 2) + 1);
  EXPECT_LE(std::stod(last.substr(last.rfind(',') + 1)), 1e-9);
  EXPECT_LE(r.final.max_defect, 1e-9);
}

TEST_F(CliFiles, ClassicalExp1DriftsOffSphere) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = cmd_train(train_options(ModelKind::Classical, 4, seed), dir_ / std::to_string(seed), log_);
    ASSERT_EQ(r.exit_code, kOk) << "seed " << seed;
    EXPECT_GT(r.final.mean_test_defect, 1e-3) << "seed " << seed;
  }
}

TEST_F(CliFiles, TrainIsDeterministic) {
  auto o = train_options(ModelKind::Classical, 2, 4);
  o.data.p_train = o.data.p_test = 20;
  o.train.epochs = 30;
  cmd_train(o, dir_ / "a", log_);
  cmd_train(o, dir_ / "b", log_);
  EXPECT_EQ(read_text(dir_ / "a" / "metrics.csv"), read_text(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(read_text(dir_ / "a" / "checkpoint.json"), read_text(dir_ / "b" / "checkpoint.json"));
}

TEST(TrainConfigFile, FlatKeys) {
  const auto o = train_options_from_json(
      {{"model", "classical"}, {"experiment", "exp2"}, {"layers", 3}, {"quick", true}, {"lr0", 2.0}, {"data_seed", 8}});
  EXPECT_EQ(o.model, ModelKind::Classical);
  EXPECT_EQ(o.data.experiment, Experiment::Exp2);
  EXPECT_EQ(o.layers, 3);
  EXPECT_EQ(o.train.epochs, kQuickEpochs);
  EXPECT_EQ(o.train.lr0, 2.0);
  EXPECT_EQ(o.data.seed, 8u);
  EXPECT_THROW(train_options_from_json({{"layer", 3}}), InvalidConfig);
  EXPECT_THROW(train_options_from_json({{"layers", "three"}}), InvalidConfig);
}

// ---------------------------------------------------------------------------

SweepSpec tiny_sweep(Experiment exp) {
  SweepSpec s = default_sweep_spec(exp);
  s.data.p_train = s.data.p_test = 8;
  s.data.steps = 1 << 8;
  s.train.epochs = 3;
  s.train.lr0 = 0.1;
  return s;
}

std::multiset<std::size_t> counts_for(const SweepResult& r, ModelKind model) {
  std::multiset<std::size_t> out;
  for (const auto& row : r.rows)
    if (row.cell.model == model && row.cell.seed == 1) out.insert(row.param_count);
  return out;
}

TEST_F(CliFiles, SweepSingleCell) {
  SweepSpec s = tiny_sweep(Experiment::Exp1);
  s.manifold_layers = {2};
  s.classical_layers = {1};
  s.seeds = {7};
  // One cell per model kind is the smallest grid; check each produces one row.
  const auto r = cmd_sweep(s, dir_, log_);
  ASSERT_EQ(r.result.rows.size(), 2u);
  EXPECT_EQ(r.exit_code, kOk);
  std::istringstream csv(read_text(dir_ / "results.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 3);
  EXPECT_TRUE(fs::exists(dir_ / "cells" / "manifold_M2_seed7.csv"));
}

TEST_F(CliFiles, SweepDefaultGridsParamCounts) {
  const auto r1 = cmd_sweep(tiny_sweep(Experiment::Exp1), dir_ / "e1", log_).result;
  EXPECT_EQ(counts_for(r1, ModelKind::Classical), (std::multiset<std::size_t>{21, 42, 84}));
  EXPECT_EQ(counts_for(r1, ModelKind::Manifold), (std::multiset<std::size_t>{10, 20, 40, 80}));
  EXPECT_EQ(r1.rows.size(), 21u);

  auto s2 = tiny_sweep(Experiment::Exp2);
  s2.train.epochs = 1;
  const auto r2 = cmd_sweep(s2, dir_ / "e2", log_).result;
  EXPECT_EQ(counts_for(r2, ModelKind::Classical), (std::multiset<std::size_t>{171, 342, 684, 1368}));
  EXPECT_EQ(counts_for(r2, ModelKind::Manifold), (std::multiset<std::size_t>{165, 330, 660}));
  for (const auto& row : r2.rows) {
    const auto net = make_config(row.cell.model, ManifoldKind::SO3, row.cell.layers);
    EXPECT_EQ(row.param_count, param_count(net));
  }
}

TEST_F(CliFiles, SweepArtifactsReproducibleAcrossWorkerCounts) {
  SweepSpec s = tiny_sweep(Experiment::Exp1);
  s.seeds = {1, 2};
  cmd_sweep(s, dir_ / "a", log_);
  s.workers = 3;
  cmd_sweep(s, dir_ / "b", log_);
  for (const char* f : {"results.csv", "summary.csv", "plot.svg", "cells/classical_M4_seed2.csv"})
    EXPECT_EQ(read_text(dir_ / "a" / f), read_text(dir_ / "b" / f)) << f;
  const std::string svg = read_text(dir_ / "a" / "plot.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  const auto meta = json::parse(read_text(dir_ / "a" / "metadata.json"));
  EXPECT_EQ(meta.at("config").at("seeds"), json({1, 2}));
}

TEST_F(CliFiles, SweepRecordsDivergedCells) {
  SweepSpec s = tiny_sweep(Experiment::Exp1);
  s.manifold_layers = {1};
  s.classical_layers = {1};
  s.seeds = {1};
  s.train.lr0 = 1e6;
  s.train.epochs = 200;
  const auto r = cmd_sweep(s, dir_, log_);
  EXPECT_EQ(r.exit_code, kRunFailed);
  EXPECT_EQ(r.result.rows[0].status, "diverged");
  EXPECT_NE(read_text(dir_ / "results.csv").find(",diverged,"), std::string::npos);
  EXPECT_NE(read_text(dir_ / "plot.svg").find("omitted"), std::string::npos);
}

TEST(SweepSpecFile, KeysAndDefaults) {
  const auto s = sweep_spec_from_json({{"experiment", "exp2"}, {"seeds", {4}}, {"quick", true}, {"workers", 2}});
  EXPECT_EQ(s.manifold_layers, (std::vector<int>{5, 10, 20}));
  EXPECT_EQ(s.classical_layers, (std::vector<int>{1, 2, 4, 8}));
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{4}));
  EXPECT_EQ(s.train.epochs, kQuickEpochs);
  EXPECT_EQ(s.workers, 2);
  EXPECT_EQ(sweep_spec_from_json(json::object()).seeds.size(), 3u);
  EXPECT_THROW(sweep_spec_from_json({{"manifold_layers", json::array()}}), InvalidConfig);
  EXPECT_THROW(sweep_spec_from_json({{"manifold_layer", {1}}}), InvalidConfig);
}

TEST(Aggregate, MedianTreatsDivergedAsInfinite) {
  SweepResult r;
  auto row = [](std::uint64_t seed, const char* status, double test) {
    SweepRow x{{ModelKind::Classical, 2, seed}, 42, status, {}};
    x.final.test_loss = test;
    x.final.train_loss = test;
    x.final.mean_test_defect = 0.1;
    return x;
  };
  r.rows = {row(1, "ok", 0.5), row(2, "diverged", 0.0), row(3, "ok", 0.2)};
  auto points = aggregate(r);
  ASSERT_EQ(points.size(), 1u);
  EXPECT_EQ(points[0].median_test_loss, 0.5);
  r.rows[0].status = "error: boom";
  EXPECT_TRUE(std::isinf(aggregate(r)[0].median_test_loss));
}

// ---------------------------------------------------------------------------

TEST_F(CliFiles, CheckSuites) {
  EXPECT_EQ(cmd_check({"bracket", "integrator"}, 0, dir_, log_), kOk);
  const auto j = json::parse(read_text(dir_ / "check.json"));
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("suites").size(), 2u);
  EXPECT_NE(log_.str().find("PASS bracket.sphere2_bracket_generating_depth1"), std::string::npos);
  EXPECT_THROW(cmd_check({"nonsense"}, 0, dir_, log_), InvalidConfig);
}

TEST(CheckSuites, GradcheckPasses) {
  const auto rep = run_check("gradcheck", 0);
  EXPECT_TRUE(rep.passed()) << to_json(rep).dump();
}

TEST(CheckSuites, InvariantsPass) {
  const auto rep = run_check("invariants", 0);
  EXPECT_TRUE(rep.passed()) << to_json(rep).dump();
}

// ---------------------------------------------------------------------------
// The executable itself.

int run(const std::string& args) {
  const int status = std::system((std::string(MNODE_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(CliFiles, ExecutableExitStatuses) {
  const std::string out = dir_.string();
  EXPECT_EQ(run("gen-data --p-train 2 --p-test 2 --seed 1 --steps 64 --out " + out + "/d"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "d" / "train.json"));
  EXPECT_EQ(run("train --train-data " + out + "/d/train.json --test-data " + out + "/d/test.json --epochs 2 --out " +
                out + "/t"),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "t" / "metrics.csv"));
  EXPECT_EQ(run("check --suite bracket --out " + out + "/c"), 0);
  EXPECT_NE(run("train --layers 2"), 0);              // --out missing
  EXPECT_NE(run("check --suite everything"), 0);      // not a suite
  write_text(dir_ / "bad.json", R"({"epochz": 3})");
  EXPECT_EQ(run("train --config " + out + "/bad.json --out " + out + "/x"), kError);
  write_text(dir_ / "hot.json", R"({"model": "classical", "layers": 1, "lr0": 1e6, "epochs": 100, "p_train": 4,
                                    "p_test": 4, "steps": 16})");
  EXPECT_EQ(run("train --config " + out + "/hot.json --seed 1 --out " + out + "/h"), kRunFailed);
  EXPECT_TRUE(fs::exists(dir_ / "h" / "metrics.csv"));
}

}  // namespace
}  // namespace mnode::cli
