#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnode/checks.hpp"
#include "mnode/data.hpp"
#include "mnode/errors.hpp"
#include "mnode/network.hpp"
#include "mnode/train.hpp"

namespace mnode {

/// End-of-run numbers for one training run. A diverged run reports infinite
/// losses; its defect figures come from the last record where they are finite.
struct FinalMetrics {
  int epochs_run = 0;
  bool diverged = false;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_test_defect = std::numeric_limits<double>::quiet_NaN();
  double max_defect = 0.0;  // over every record of the run; NaN counts as inf
};

inline FinalMetrics final_metrics(const RunMetrics& m) {
  FinalMetrics f;
  f.epochs_run = static_cast<int>(m.epochs.size());
  f.diverged = m.diverged;
  if (m.epochs.empty()) return f;
  const auto inf = std::numeric_limits<double>::infinity();
  f.train_loss = m.diverged ? inf : m.epochs.back().train_loss;
  f.test_loss = m.diverged ? inf : m.epochs.back().test_loss;
  f.mean_test_defect = m.epochs.back().mean_test_defect;
  for (const auto& r : m.epochs) f.max_defect = std::max(f.max_defect, std::isnan(r.max_defect) ? inf : r.max_defect);
  return f;
}

// ---------------------------------------------------------------------------
// Sweep grid and settings

/// Dataset generation settings shared by the commands.
struct DataSpec {
  Experiment experiment = Experiment::Exp1;
  std::size_t p_train = 100;
  std::size_t p_test = 100;
  int steps = kDefaultFlowSteps;
  std::uint64_t seed = 0;
};

struct SweepSpec {
  DataSpec data;
  std::vector<int> manifold_layers;
  std::vector<int> classical_layers;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainConfig train;
  int workers = 1;
};

/// Layer grids of the two experiments; 3 seeds, default training.
inline SweepSpec default_sweep_spec(Experiment exp) {
  SweepSpec s;
  s.data.experiment = exp;
  if (exp == Experiment::Exp1) {
    s.classical_layers = {1, 2, 4};
    s.manifold_layers = {1, 2, 4, 8};
  } else {
    s.classical_layers = {1, 2, 4, 8};
    s.manifold_layers = {5, 10, 20};
  }
  return s;
}

inline void validate(const SweepSpec& s) {
  if (s.manifold_layers.empty() || s.classical_layers.empty()) throw InvalidConfig("sweep layer lists must be nonempty");
  if (s.seeds.empty()) throw InvalidConfig("sweep needs at least one seed");
  for (int m : s.manifold_layers)
    if (m < 1) throw InvalidConfig("layer counts must be >= 1");
  for (int m : s.classical_layers)
    if (m < 1) throw InvalidConfig("layer counts must be >= 1");
  if (s.workers < 1) throw InvalidConfig("workers must be >= 1");
  if (s.data.p_train < 1 || s.data.p_test < 1) throw InvalidConfig("dataset sizes must be >= 1");
  if (s.data.steps < 1) throw InvalidConfig("steps must be >= 1");
  validate(s.train);
}

namespace detail {

/// Moves a key out of `j` into `dst` when present.
template <class T>
void take(nlohmann::json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end()) {
    dst = it->get<T>();
    j.erase(it);
  }
}

/// Applies data keys (p_train, p_test, steps, data_seed) and removes them.
inline void take_data_keys(nlohmann::json& j, DataSpec& d) {
  take(j, "p_train", d.p_train);
  take(j, "p_test", d.p_test);
  take(j, "steps", d.steps);
  take(j, "data_seed", d.seed);
}

/// Applies "quick" and the train keys left in `j`.
inline TrainConfig take_train_keys(nlohmann::json& j, TrainConfig base) {
  bool quick = false;
  take(j, "quick", quick);
  base = train_config_from_json(j, base);
  if (quick) base.epochs = kQuickEpochs;
  return base;
}

template <class F>
auto wrap_json_errors(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad config value: ") + e.what());
  }
}

}  // namespace detail

/// Flat JSON: experiment, manifold_layers, classical_layers, seeds, workers,
/// p_train, p_test, steps, data_seed, quick, and any train key. Missing keys
/// keep the experiment's defaults.
inline SweepSpec sweep_spec_from_json(nlohmann::json j) {
  if (!j.is_object()) throw InvalidConfig("sweep config must be a JSON object");
  return detail::wrap_json_errors([&] {
    std::string exp = "exp1";
    detail::take(j, "experiment", exp);
    SweepSpec s = default_sweep_spec(experiment_from_string(exp));
    detail::take(j, "manifold_layers", s.manifold_layers);
    detail::take(j, "classical_layers", s.classical_layers);
    detail::take(j, "seeds", s.seeds);
    detail::take(j, "workers", s.workers);
    detail::take_data_keys(j, s.data);
    s.train = detail::take_train_keys(j, s.train);
    validate(s);
    return s;
  });
}

inline nlohmann::json to_json(const DataSpec& d) {
  return {{"experiment", to_string(d.experiment)},
          {"p_train", d.p_train},
          {"p_test", d.p_test},
          {"steps", d.steps},
          {"data_seed", d.seed}};
}

inline nlohmann::json to_json(const SweepSpec& s) {
  return {{"data", to_json(s.data)},
          {"manifold_layers", s.manifold_layers},
          {"classical_layers", s.classical_layers},
          {"seeds", s.seeds},
          {"workers", s.workers},
          {"train", to_json(s.train)}};
}

// ---------------------------------------------------------------------------
// Running

struct SweepCell {
  ModelKind model = ModelKind::Manifold;
  int layers = 1;
  std::uint64_t seed = 0;
};

/// Classical cells first, then manifold; by layer count, then seed.
inline std::vector<SweepCell> sweep_cells(const SweepSpec& s) {
  std::vector<SweepCell> cells;
  for (auto model : {ModelKind::Classical, ModelKind::Manifold})
    for (int m : model == ModelKind::Classical ? s.classical_layers : s.manifold_layers)
      for (auto seed : s.seeds) cells.push_back({model, m, seed});
  return cells;
}

struct SweepRow {
  SweepCell cell;
  std::size_t param_count = 0;
  std::string status;  // ok, diverged, or error: <message>
  FinalMetrics final;
};

struct SweepResult {
  Experiment experiment = Experiment::Exp1;
  std::vector<SweepRow> rows;

  bool all_ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.status == "ok"; });
  }
};

inline std::string cell_name(const SweepCell& c) {
  return std::string(to_string(c.model)) + "_M" + std::to_string(c.layers) + "_seed" + std::to_string(c.seed);
}

/// Trains every cell on the given datasets. Cells run on up to
/// `spec.workers` threads; rows come back in cell order regardless. When
/// `cell_dir` is set, each cell's metrics CSV is written there.
inline SweepResult run_sweep(const SweepSpec& spec, const Dataset& train, const Dataset& test,
                             const std::filesystem::path& cell_dir, std::ostream* log) {
  validate(spec);
  const auto cells = sweep_cells(spec);
  const ManifoldKind kind = manifold_of(spec.data.experiment);
  SweepResult result{spec.data.experiment, std::vector<SweepRow>(cells.size())};

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const SweepCell& c = cells[i];
      const auto net = make_config(c.model, kind, c.layers);
      SweepRow& row = result.rows[i];
      row.cell = c;
      row.param_count = param_count(net);
      try {
        TrainConfig tc = spec.train;
        tc.seed = c.seed;
        const auto run = train_loop(train, test, net, tc);
        row.final = final_metrics(run.metrics);
        row.status = run.metrics.diverged ? "diverged" : "ok";
        if (!cell_dir.empty()) write_text(cell_dir / (cell_name(c) + ".csv"), metrics_csv(run.metrics));
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << cell_name(c) << " params=" << row.param_count << " " << row.status
             << " test_loss=" << format_double(row.final.test_loss) << "\n";
      }
    }
  };
  const int n = std::min<int>(spec.workers, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return result;
}

// ---------------------------------------------------------------------------
// Reporting

/// One row per cell.
inline std::string sweep_csv(const SweepResult& r) {
  std::string out =
      "model,layers,param_count,seed,status,epochs_run,final_train_loss,final_test_loss,final_mean_defect,max_defect\n";
  for (const auto& row : r.rows) {
    std::string status = row.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out += std::string(to_string(row.cell.model)) + "," + std::to_string(row.cell.layers) + "," +
           std::to_string(row.param_count) + "," + std::to_string(row.cell.seed) + "," + status + "," +
           std::to_string(row.final.epochs_run) + "," + format_double(row.final.train_loss) + "," +
           format_double(row.final.test_loss) + "," + format_double(row.final.mean_test_defect) + "," +
           format_double(row.final.max_defect) + "\n";
  }
  return out;
}

/// Median over seeds for one (model, layers) pair.
struct SweepPoint {
  ModelKind model = ModelKind::Manifold;
  int layers = 1;
  std::size_t param_count = 0;
  int runs = 0;
  double median_train_loss = 0.0;
  double median_test_loss = 0.0;
  double median_mean_defect = 0.0;
};

/// Medians across seeds. Failed and diverged runs count as infinite loss.
inline std::vector<SweepPoint> aggregate(const SweepResult& r) {
  std::map<std::pair<int, int>, std::vector<const SweepRow*>> groups;
  for (const auto& row : r.rows) groups[{static_cast<int>(row.cell.model), row.cell.layers}].push_back(&row);
  std::vector<SweepPoint> points;
  for (const auto& [key, rows] : groups) {
    SweepPoint p{rows.front()->cell.model, rows.front()->cell.layers, rows.front()->param_count,
                 static_cast<int>(rows.size())};
    std::vector<double> train, test, def;
    for (const auto* row : rows) {
      const bool ok = row->status == "ok";
      const double inf = std::numeric_limits<double>::infinity();
      train.push_back(ok ? row->final.train_loss : inf);
      test.push_back(ok ? row->final.test_loss : inf);
      def.push_back(row->final.mean_test_defect);
    }
    p.median_train_loss = median_of(train);
    p.median_test_loss = median_of(test);
    p.median_mean_defect = median_of(def);
    points.push_back(p);
  }
  return points;
}

inline std::string sweep_summary_csv(const std::vector<SweepPoint>& points) {
  std::string out = "model,layers,param_count,runs,median_train_loss,median_test_loss,median_mean_defect\n";
  for (const auto& p : points)
    out += std::string(to_string(p.model)) + "," + std::to_string(p.layers) + "," + std::to_string(p.param_count) +
           "," + std::to_string(p.runs) + "," + format_double(p.median_train_loss) + "," +
           format_double(p.median_test_loss) + "," + format_double(p.median_mean_defect) + "\n";
  return out;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

}  // namespace detail

/// Line chart of median final loss against parameter count, log-scaled loss
/// axis, one colour per model kind (solid: test, dashed: train). Points with
/// non-finite loss are left out and listed in the footer.
inline std::string sweep_svg(const std::vector<SweepPoint>& points, const std::string& title) {
  const double W = 640, H = 420, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmax = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  int omitted = 0;
  for (const auto& p : points) {
    xmax = std::max(xmax, static_cast<double>(p.param_count));
    for (double v : {p.median_test_loss, p.median_train_loss}) {
      if (std::isfinite(v) && v > 0.0) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      } else {
        ++omitted;
      }
    }
  }
  if (!(hi > 0.0)) lo = hi = 1.0;
  const double dlo = std::floor(std::log10(lo)), dhi = std::max(std::ceil(std::log10(hi)), dlo + 1.0);
  const double xstep = detail::nice_step(std::max(xmax, 1.0), 5);
  const double xtop = std::ceil(std::max(xmax, 1.0) / xstep) * xstep;
  auto sx = [&](double x) { return left + pw * x / xtop; };
  auto sy = [&](double v) { return top + ph * (dhi - std::log10(v)) / (dhi - dlo); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::fmt("%.1f", left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       title + "</text>\n";
  // Axes, grid and ticks.
  for (double d = dlo; d <= dhi + 1e-9; d += 1.0) {
    const double y = sy(std::pow(10.0, d));
    s += "<line x1=\"" + detail::fmt("%.1f", left) + "\" y1=\"" + detail::fmt("%.1f", y) + "\" x2=\"" +
         detail::fmt("%.1f", left + pw) + "\" y2=\"" + detail::fmt("%.1f", y) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + detail::fmt("%.1f", left - 6) + "\" y=\"" + detail::fmt("%.1f", y + 4) +
         "\" text-anchor=\"end\">1e" + detail::fmt("%.0f", d) + "</text>\n";
  }
  for (double x = 0.0; x <= xtop + 1e-9; x += xstep) {
    s += "<text x=\"" + detail::fmt("%.1f", sx(x)) + "\" y=\"" + detail::fmt("%.1f", top + ph + 18) +
         "\" text-anchor=\"middle\">" + detail::fmt("%.0f", x) + "</text>\n";
  }
  s += "<rect x=\"" + detail::fmt("%.1f", left) + "\" y=\"" + detail::fmt("%.1f", top) + "\" width=\"" +
       detail::fmt("%.1f", pw) + "\" height=\"" + detail::fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + detail::fmt("%.1f", left + pw / 2) + "\" y=\"" + detail::fmt("%.1f", H - 12) +
       "\" text-anchor=\"middle\"># of parameters</text>\n";
  s += "<text transform=\"translate(18," + detail::fmt("%.1f", top + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">median final loss</text>\n";

  // Series.
  struct Series {
    ModelKind model;
    bool test;
    const char* colour;
    const char* label;
  };
  const Series series[] = {{ModelKind::Manifold, true, "#1f77b4", "manifold test"},
                           {ModelKind::Manifold, false, "#1f77b4", "manifold train"},
                           {ModelKind::Classical, true, "#d62728", "classical test"},
                           {ModelKind::Classical, false, "#d62728", "classical train"}};
  double ly = top + 10;
  for (const auto& se : series) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : points) {
      if (p.model != se.model) continue;
      const double v = se.test ? p.median_test_loss : p.median_train_loss;
      if (std::isfinite(v) && v > 0.0) pts.emplace_back(sx(static_cast<double>(p.param_count)), sy(v));
    }
    std::sort(pts.begin(), pts.end());
    const std::string dash = se.test ? "" : " stroke-dasharray=\"6,4\"";
    if (pts.size() > 1) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(se.colour) + "\" stroke-width=\"2\"" + dash + " points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i)
        s += (i ? " " : "") + detail::fmt("%.1f", pts[i].first) + "," + detail::fmt("%.1f", pts[i].second);
      s += "\"/>\n";
    }
    for (const auto& [x, y] : pts)
      s += "<circle cx=\"" + detail::fmt("%.1f", x) + "\" cy=\"" + detail::fmt("%.1f", y) + "\" r=\"3\" fill=\"" +
           se.colour + "\"/>\n";
    const double lx = left + pw + 15;
    s += "<line x1=\"" + detail::fmt("%.1f", lx) + "\" y1=\"" + detail::fmt("%.1f", ly) + "\" x2=\"" +
         detail::fmt("%.1f", lx + 25) + "\" y2=\"" + detail::fmt("%.1f", ly) + "\" stroke=\"" + se.colour +
         "\" stroke-width=\"2\"" + dash + "/>\n";
    s += "<text x=\"" + detail::fmt("%.1f", lx + 32) + "\" y=\"" + detail::fmt("%.1f", ly + 4) + "\">" + se.label +
         "</text>\n";
    ly += 20;
  }
  if (omitted > 0)
    s += "<text x=\"" + detail::fmt("%.1f", left + pw + 15) + "\" y=\"" + detail::fmt("%.1f", ly + 10) + "\">" +
         std::to_string(omitted) + " diverged point(s) omitted</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace mnode
