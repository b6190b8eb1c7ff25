#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mnode/data.hpp"
#include "mnode/errors.hpp"
#include "mnode/grad.hpp"
#include "mnode/network.hpp"

namespace mnode {

struct TrainConfig {
  double lr0 = 10.0;
  double momentum = 0.9;
  std::vector<int> decay_epochs{500, 1000, 2000, 4000, 6000};
  double decay_factor = 0.8;
  double lambda = 1e-3;
  int epochs = 8000;
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;      // parameter init and minibatch shuffling
};

inline constexpr int kQuickEpochs = 2000;

inline void validate(const TrainConfig& c) {
  if (!(c.lr0 > 0.0)) throw InvalidConfig("lr0 must be positive");
  if (!(c.decay_factor > 0.0 && c.decay_factor < 1.0)) throw InvalidConfig("decay_factor must be in (0,1)");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw InvalidConfig("momentum must be in [0,1)");
  if (!(c.lambda >= 0.0)) throw InvalidConfig("lambda must be >= 0");
  if (c.epochs < 0) throw InvalidConfig("epochs must be >= 0");
}

/// (1/P) sum ||pred - target||^2 + (lambda dt / 2) sum_N ||Theta_N||^2.
inline double loss(std::span<const State> preds, std::span<const State> targets, const ParamList& params,
                   double lambda, double dt) {
  if (preds.size() != targets.size() || preds.empty()) throw InvalidConfig("loss needs equal, nonempty batches");
  double s = 0.0;
  for (std::size_t j = 0; j < preds.size(); ++j) s += (preds[j] - targets[j]).squaredNorm();
  return s / static_cast<double>(preds.size()) + regularizer(params, lambda, dt);
}

/// lr0 * factor^(number of decay epochs <= epoch).
inline double lr_schedule(int epoch, const TrainConfig& c) {
  const auto drops = std::count_if(c.decay_epochs.begin(), c.decay_epochs.end(), [&](int e) { return e <= epoch; });
  return c.lr0 * std::pow(c.decay_factor, static_cast<double>(drops));
}

/// Heavy-ball momentum: v <- mu v + g, theta <- theta - lr v.
inline void sgd_step(std::span<double> theta, std::span<const double> grad, std::span<double> velocity, double lr,
                     double momentum) {
  if (theta.size() != grad.size() || theta.size() != velocity.size())
    throw InvalidConfig("sgd_step: shape mismatch");
  for (std::size_t k = 0; k < theta.size(); ++k) {
    velocity[k] = momentum * velocity[k] + grad[k];
    theta[k] -= lr * velocity[k];
  }
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;        // training objective, regularizer included
  double test_loss = 0.0;         // mean squared error on the test set
  double mean_test_defect = 0.0;  // mean manifold defect of test predictions
  double max_defect = 0.0;        // worst defect over train and test predictions
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  double wall_seconds = 0.0;
};

struct RunResult {
  RunMetrics metrics;
  ParamList params;
};

struct Evaluation {
  double mse = 0.0;
  double mean_defect = 0.0;
  double max_defect = 0.0;
};

/// Prediction error and off-manifold drift of a model on a dataset.
inline Evaluation evaluate(const Dataset& data, const ParamList& params, const NetworkConfig& cfg) {
  Evaluation ev;
  for (const auto& s : data.pairs) {
    const State y = predict(s.input, params, cfg);
    ev.mse += (y - s.target.value()).squaredNorm();
    const double d = defect(cfg.manifold, y);
    ev.mean_defect += d;
    ev.max_defect = worst_defect(ev.max_defect, d);
  }
  const auto n = static_cast<double>(data.size());
  ev.mse /= n;
  ev.mean_defect /= n;
  return ev;
}

/// Prediction defects on the training set (max) for the current parameters.
inline double max_prediction_defect(const Dataset& data, const ParamList& params, const NetworkConfig& cfg) {
  double worst = 0.0;
  for (const auto& s : data.pairs) worst = worst_defect(worst, defect(cfg.manifold, predict(s.input, params, cfg)));
  return worst;
}

/// Gradient descent with momentum and the step schedule. Losses are logged
/// for the parameters at the start of each epoch. A non-finite loss stops the
/// run with `diverged` set; the records up to that point are kept.
inline RunResult train_loop(const Dataset& train, const Dataset& test, const NetworkConfig& net,
                            const TrainConfig& tc, const ParamList* initial = nullptr) {
  validate(net);
  validate(tc);
  if (train.kind != net.manifold || test.kind != net.manifold)
    throw InvalidConfig("dataset manifold does not match the network");
  if (train.pairs.empty() || test.pairs.empty()) throw InvalidConfig("empty dataset");

  const auto start = std::chrono::steady_clock::now();
  SampleStream rng(RngSeed{tc.seed});
  RunResult run{{}, initial ? *initial : init_params(net, rng)};
  if (flatten(run.params).size() != param_count(net)) throw InvalidConfig("initial parameters have wrong shape");

  std::vector<double> theta = flatten(run.params);
  std::vector<double> velocity(theta.size(), 0.0);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = tc.batch_size == 0 ? train.size() : std::min(tc.batch_size, train.size());
  std::vector<Sample> minibatch;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    const ParamList current = unflatten(net, theta);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const bool full_batch = batch == train.size();
    LossAndGradient lg;
    if (full_batch) {
      lg = network_gradient(train.pairs, current, net, tc.lambda);
      rec.train_loss = lg.loss;
      rec.max_defect = lg.max_output_defect;
    } else {
      rec.train_loss = network_loss(train.pairs, current, net, tc.lambda);
      rec.max_defect = max_prediction_defect(train, current, net);
    }
    const Evaluation ev = evaluate(test, current, net);
    rec.test_loss = ev.mse;
    rec.mean_test_defect = ev.mean_defect;
    rec.max_defect = worst_defect(rec.max_defect, ev.max_defect);
    run.metrics.epochs.push_back(rec);

    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.test_loss)) {
      run.metrics.diverged = true;
      break;
    }

    if (full_batch) {
      sgd_step(theta, flatten(lg.grad), velocity, lr, tc.momentum);
    } else {
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t pos = 0; pos < order.size(); pos += batch) {
        minibatch.clear();
        for (std::size_t k = pos; k < std::min(pos + batch, order.size()); ++k) minibatch.push_back(train.pairs[order[k]]);
        const auto g = flatten(network_gradient(minibatch, unflatten(net, theta), net, tc.lambda).grad);
        sgd_step(theta, g, velocity, lr, tc.momentum);
      }
    }
  }

  run.params = unflatten(net, theta);
  run.metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

/// CSV with columns epoch, lr, train_loss, test_loss, mean_test_defect,
/// max_defect. Numbers use 17 significant digits.
inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = "epoch,lr,train_loss,test_loss,mean_test_defect,max_defect\n";
  for (const auto& r : m.epochs) {
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_loss) + "," +
           format_double(r.test_loss) + "," + format_double(r.mean_test_defect) + "," + format_double(r.max_defect) +
           "\n";
  }
  return out;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},         {"momentum", c.momentum}, {"decay_epochs", c.decay_epochs},
          {"decay_factor", c.decay_factor}, {"lambda", c.lambda},     {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"seed", c.seed}};
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw InvalidConfig("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lr0") base.lr0 = v.get<double>();
      else if (key == "momentum") base.momentum = v.get<double>();
      else if (key == "decay_epochs") base.decay_epochs = v.get<std::vector<int>>();
      else if (key == "decay_factor") base.decay_factor = v.get<double>();
      else if (key == "lambda") base.lambda = v.get<double>();
      else if (key == "epochs") base.epochs = v.get<int>();
      else if (key == "batch_size") base.batch_size = v.get<std::size_t>();
      else if (key == "seed") base.seed = v.get<std::uint64_t>();
      else throw InvalidConfig("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad train config value: ") + e.what());
  }
  validate(base);
  return base;
}

}  // namespace mnode
