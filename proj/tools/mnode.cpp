// mnode: dataset generation, training, sweeps and checks from the command line.
//
// Settings are applied in order: built-in defaults, then the --config JSON
// file, then explicit flags.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mnode/commands.hpp"

namespace {

using namespace mnode;
using namespace mnode::cli;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--seed", c.seed, "RNG seed");
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  auto* out = app->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-invariant neural ODE experiments"};
  app.require_subcommand(1);

  // gen-data
  Common gd;
  std::optional<std::string> gd_exp;
  std::optional<std::size_t> gd_ptrain, gd_ptest;
  std::optional<int> gd_steps;
  bool gd_csv = false;
  auto* gen = app.add_subcommand("gen-data", "sample inputs and compute time-one targets");
  add_common(gen, gd, true);
  gen->add_option("--experiment", gd_exp, "exp1 (sphere) or exp2 (rotations)");
  gen->add_option("--p-train", gd_ptrain, "training pairs");
  gen->add_option("--p-test", gd_ptest, "test pairs");
  gen->add_option("--steps", gd_steps, "integrator steps");
  gen->add_flag("--csv", gd_csv, "also write CSV copies");

  // train
  Common tr;
  std::optional<std::string> tr_model, tr_exp, tr_train_data, tr_test_data;
  std::optional<int> tr_layers, tr_epochs;
  std::optional<double> tr_lr0, tr_lambda;
  bool tr_quick = false;
  auto* train = app.add_subcommand("train", "train one network");
  add_common(train, tr, true);
  train->add_option("--model", tr_model, "manifold or classical");
  train->add_option("--experiment", tr_exp, "exp1 or exp2");
  train->add_option("--layers", tr_layers, "number of layers M");
  train->add_option("--train-data", tr_train_data, "training dataset JSON");
  train->add_option("--test-data", tr_test_data, "test dataset JSON");
  train->add_option("--epochs", tr_epochs, "number of epochs");
  train->add_option("--lr0", tr_lr0, "initial learning rate");
  train->add_option("--lambda", tr_lambda, "regularization weight");
  train->add_flag("--quick", tr_quick, "2000 epochs");

  // sweep
  Common sw;
  std::optional<std::string> sw_exp;
  std::optional<int> sw_workers, sw_epochs;
  bool sw_quick = false;
  auto* sweep = app.add_subcommand("sweep", "train every (model, M, seed) cell and plot loss vs parameters");
  add_common(sweep, sw, true);
  sweep->add_option("--experiment", sw_exp, "exp1 or exp2 (selects the default layer grid)");
  sweep->add_option("--workers", sw_workers, "parallel cells");
  sweep->add_option("--epochs", sw_epochs, "epochs per cell");
  sweep->add_flag("--quick", sw_quick, "2000 epochs per cell");

  // check
  Common ck;
  std::vector<std::string> ck_suites;
  auto* check = app.add_subcommand("check", "run validation suites");
  add_common(check, ck, false);
  check->add_option("--suite", ck_suites, "invariants, gradcheck, bracket, integrator or all")
      ->check(CLI::IsMember({"invariants", "gradcheck", "bracket", "integrator", "all"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      GenDataOptions o = gen_data_options_from_json(read_config(gd.config));
      if (gd_exp) o.data.experiment = experiment_from_string(*gd_exp);
      if (gd_ptrain) o.data.p_train = *gd_ptrain;
      if (gd_ptest) o.data.p_test = *gd_ptest;
      if (gd_steps) o.data.steps = *gd_steps;
      o.data.seed = gd.seed.value_or(0);
      o.csv = o.csv || gd_csv;
      return cmd_gen_data(o, gd.out, std::cout);
    }
    if (train->parsed()) {
      const json cfg = read_config(tr.config);
      TrainOptions o = train_options_from_json(cfg);
      if (tr_model) o.model = model_kind_from_string(*tr_model);
      if (tr_exp) o.data.experiment = experiment_from_string(*tr_exp);
      if (tr_layers) o.layers = *tr_layers;
      if (tr_train_data) o.train_data = *tr_train_data;
      if (tr_test_data) o.test_data = *tr_test_data;
      if (tr_quick) o.train.epochs = kQuickEpochs;
      if (tr_epochs) o.train.epochs = *tr_epochs;
      if (tr_lr0) o.train.lr0 = *tr_lr0;
      if (tr_lambda) o.train.lambda = *tr_lambda;
      if (tr.seed) {
        o.train.seed = *tr.seed;
        if (!cfg.contains("data_seed")) o.data.seed = *tr.seed;
      }
      validate(o.train);
      return cmd_train(o, tr.out, std::cout).exit_code;
    }
    if (sweep->parsed()) {
      json cfg = read_config(sw.config);
      if (sw_exp) cfg["experiment"] = *sw_exp;
      SweepSpec s = sweep_spec_from_json(cfg);
      if (sw_workers) s.workers = *sw_workers;
      if (sw_quick) s.train.epochs = kQuickEpochs;
      if (sw_epochs) s.train.epochs = *sw_epochs;
      if (sw.seed) s.data.seed = *sw.seed;
      return cmd_sweep(s, sw.out, std::cout).exit_code;
    }
    if (check->parsed()) {
      json cfg = read_config(ck.config);
      std::vector<std::string> suites = ck_suites;
      if (suites.empty() && cfg.contains("suites")) suites = cfg.at("suites").get<std::vector<std::string>>();
      return cmd_check(suites, ck.seed.value_or(0), ck.out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kUsage;
}
