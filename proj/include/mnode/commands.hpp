#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnode/checkpoint.hpp"
#include "mnode/checks.hpp"
#include "mnode/data.hpp"
#include "mnode/network.hpp"
#include "mnode/sweep.hpp"
#include "mnode/train.hpp"

// The four subcommands as library calls. Each writes its files under `out`
// and returns a process exit status.

namespace mnode::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kError = 1,          // bad config, unreadable input, failed write
  kUsage = 2,          // command-line parse errors
  kRunFailed = 3,      // divergence or failed sweep cells; outputs still written
  kCheckFailed = 4,
};

/// Reads a JSON config file; an empty path yields an empty object.
inline json read_config(const fs::path& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(read_text(path));
    if (!j.is_object()) throw InvalidConfig(path.string() + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
}

/// JSON number, or a string for inf/nan (which JSON cannot hold).
inline json number(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

inline json to_json(const FinalMetrics& f) {
  return {{"epochs_run", f.epochs_run},
          {"diverged", f.diverged},
          {"train_loss", number(f.train_loss)},
          {"test_loss", number(f.test_loss)},
          {"mean_test_defect", number(f.mean_test_defect)},
          {"max_defect", number(f.max_defect)}};
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  DataSpec data;
  bool csv = false;
};

/// Keys: experiment, p_train, p_test, steps, csv.
inline GenDataOptions gen_data_options_from_json(json j) {
  return detail::wrap_json_errors([&] {
    GenDataOptions o;
    std::string exp = "exp1";
    detail::take(j, "experiment", exp);
    o.data.experiment = experiment_from_string(exp);
    detail::take(j, "p_train", o.data.p_train);
    detail::take(j, "p_test", o.data.p_test);
    detail::take(j, "steps", o.data.steps);
    detail::take(j, "csv", o.csv);
    if (!j.empty()) throw InvalidConfig("unknown gen-data config key '" + j.begin().key() + "'");
    return o;
  });
}

inline std::pair<Dataset, Dataset> make_datasets(const DataSpec& d) {
  return generate_dataset(d.experiment, d.p_train, d.p_test, d.seed, d.steps);
}

/// Writes train.json and test.json (plus CSV copies when asked).
inline int cmd_gen_data(const GenDataOptions& o, const fs::path& out, std::ostream& log) {
  const auto [train, test] = make_datasets(o.data);
  save_dataset(train, out / "train.json");
  save_dataset(test, out / "test.json");
  if (o.csv) {
    write_text(out / "train.csv", to_csv(train));
    write_text(out / "test.csv", to_csv(test));
  }
  for (const Dataset* d : {&train, &test})
    log << d->meta.split << ": " << d->size() << " " << to_string(d->kind) << " pairs, max defect "
        << format_double(max_defect(*d)) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  ModelKind model = ModelKind::Manifold;
  int layers = 4;
  DataSpec data;           // experiment, and generation settings when no files are given
  fs::path train_data;     // optional dataset files
  fs::path test_data;
  TrainConfig train;
};

/// Keys: model, experiment, layers, train_data, test_data, p_train, p_test,
/// steps, data_seed, quick, and the train keys.
inline TrainOptions train_options_from_json(json j) {
  return detail::wrap_json_errors([&] {
    TrainOptions o;
    std::string model = "manifold", exp = "exp1", train_path, test_path;
    detail::take(j, "model", model);
    detail::take(j, "experiment", exp);
    detail::take(j, "layers", o.layers);
    detail::take(j, "train_data", train_path);
    detail::take(j, "test_data", test_path);
    o.model = model_kind_from_string(model);
    o.data.experiment = experiment_from_string(exp);
    o.train_data = train_path;
    o.test_data = test_path;
    detail::take_data_keys(j, o.data);
    o.train = detail::take_train_keys(j, o.train);
    return o;
  });
}

inline json to_json(const TrainOptions& o) {
  return {{"model", to_string(o.model)},
          {"layers", o.layers},
          {"data", to_json(o.data)},
          {"train_data", o.train_data.string()},
          {"test_data", o.test_data.string()},
          {"train", to_json(o.train)}};
}

struct TrainOutcome {
  RunResult run;
  FinalMetrics final;
  int exit_code = kOk;
};

inline bool all_finite(const ParamList& p) {
  const auto flat = flatten(p);
  return std::all_of(flat.begin(), flat.end(), [](double v) { return std::isfinite(v); });
}

/// Writes metrics.csv, checkpoint.json (omitted when the parameters blew up)
/// and metadata.json.
inline TrainOutcome cmd_train(const TrainOptions& o, const fs::path& out, std::ostream& log) {
  if (o.train_data.empty() != o.test_data.empty()) throw InvalidConfig("give both train and test data, or neither");
  std::pair<Dataset, Dataset> data =
      o.train_data.empty() ? make_datasets(o.data) : std::pair{load_dataset(o.train_data), load_dataset(o.test_data)};
  const auto net = make_config(o.model, manifold_of(o.data.experiment), o.layers);

  TrainOutcome r{train_loop(data.first, data.second, net, o.train), {}, kOk};
  r.final = final_metrics(r.run.metrics);
  write_text(out / "metrics.csv", metrics_csv(r.run.metrics));
  const bool keep = all_finite(r.run.params);
  if (keep) save_checkpoint({net, r.run.params}, out / "checkpoint.json");

  json meta{{"command", "train"},
            {"config", to_json(o)},
            {"network",
             {{"model", to_string(net.model)},
              {"manifold", to_string(net.manifold)},
              {"layers", net.layers},
              {"param_count", param_count(net)}}},
            {"metrics", "metrics.csv"},
            {"checkpoint", keep ? json("checkpoint.json") : json(nullptr)},
            {"final", to_json(r.final)},
            {"wall_seconds", r.run.metrics.wall_seconds}};
  write_text(out / "metadata.json", meta.dump(1) + "\n");

  log << to_string(net.model) << " " << to_string(net.manifold) << " M=" << net.layers << " ("
      << param_count(net) << " params): " << r.final.epochs_run << " epochs, test loss "
      << format_double(r.final.test_loss) << ", mean test defect " << format_double(r.final.mean_test_defect) << "\n";
  if (r.run.metrics.diverged) {
    log << "diverged: loss became non-finite at epoch " << r.run.metrics.epochs.back().epoch << "\n";
    r.exit_code = kRunFailed;
  }
  return r;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOutcome {
  SweepResult result;
  int exit_code = kOk;
};

/// Writes results.csv, summary.csv, plot.svg, metadata.json and one metrics
/// CSV per cell under cells/.
inline SweepOutcome cmd_sweep(const SweepSpec& spec, const fs::path& out, std::ostream& log) {
  validate(spec);
  const auto start = std::chrono::steady_clock::now();
  const auto [train, test] = make_datasets(spec.data);
  SweepOutcome r{run_sweep(spec, train, test, out / "cells", &log), kOk};
  const auto points = aggregate(r.result);
  write_text(out / "results.csv", sweep_csv(r.result));
  write_text(out / "summary.csv", sweep_summary_csv(points));
  write_text(out / "plot.svg", sweep_svg(points, std::string(to_string(spec.data.experiment)) + ": final loss vs parameters"));
  json meta{{"command", "sweep"},
            {"config", to_json(spec)},
            {"results", "results.csv"},
            {"summary", "summary.csv"},
            {"plot", "plot.svg"},
            {"all_ok", r.result.all_ok()},
            {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  write_text(out / "metadata.json", meta.dump(1) + "\n");
  if (!r.result.all_ok()) r.exit_code = kRunFailed;
  return r;
}

// ---------------------------------------------------------------------------
// check

/// Runs the named suites ("all" expands to every suite). Prints one line per
/// item and writes check.json under `out` when given.
inline int cmd_check(std::vector<std::string> suites, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  if (suites.empty() || (suites.size() == 1 && suites[0] == "all")) suites = check_suites();
  json reports = json::array();
  bool ok = true;
  for (const auto& name : suites) {
    const auto rep = run_check(name, seed);
    for (const auto& c : rep.items)
      log << (c.passed ? "PASS " : "FAIL ") << rep.suite << "." << c.name << " value=" << detail::fmt("%.6g", c.value)
          << " threshold=" << detail::fmt("%.6g", c.threshold) << (c.detail.empty() ? "" : " (" + c.detail + ")")
          << "\n";
    ok = ok && rep.passed();
    reports.push_back(to_json(rep));
  }
  if (!out.empty())
    write_text(out / "check.json", json{{"seed", seed}, {"passed", ok}, {"suites", reports}}.dump(1) + "\n");
  return ok ? kOk : kCheckFailed;
}

}  // namespace mnode::cli
