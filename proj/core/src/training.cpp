#include "axiseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

#include "axiseg/ops.hpp"

namespace axiseg {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(loss_mix >= 0.0 && loss_mix <= 1.0)) {
    throw std::invalid_argument("TrainConfig: loss_mix must be in [0, 1]");
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "step,loss,grad_norm\n";
  char buf[96];
  for (const TrainStepRecord& r : steps) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", r.step, r.loss, r.grad_norm);
    out += buf;
  }
  if (!validations.empty()) {
    out += "epoch,iou,precision,recall,f1,dice\n";
    for (const ValidationRecord& v : validations) {
      out += std::to_string(v.epoch) + "," + v.report.csv_row() + "\n";
    }
  }
  return out;
}

Tensor bce_dice_loss(const Tensor& pred, const Tensor& target, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("bce_dice_loss: lambda must be in [0, 1]");
  }
  if (!(pred.shape() == target.shape())) {
    throw std::invalid_argument("bce_dice_loss: shape mismatch " + pred.shape().str() + " vs " +
                                target.shape().str());
  }
  for (double v : pred.values()) {
    if (!(v > 0.0 && v < 1.0)) {
      throw std::invalid_argument("bce_dice_loss: prediction outside (0, 1)");
    }
  }
  for (double v : target.values()) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("bce_dice_loss: target is not a binary mask");
    }
  }

  Tensor p = clamp(pred, 1e-7, 1.0 - 1e-7);
  Tensor one_minus_p = scalar_add(scalar_mul(p, -1.0), 1.0);
  Tensor one_minus_t = scalar_add(scalar_mul(target, -1.0), 1.0);
  Tensor bce = scalar_mul(
      mean(add(mul(target, log_op(p)), mul(one_minus_t, log_op(one_minus_p)))), -1.0);

  constexpr double kDiceEps = 1.0;
  Tensor numer = scalar_add(scalar_mul(sum(mul(pred, target)), 2.0), kDiceEps);
  Tensor denom = scalar_add(add(sum(pred), sum(target)), kDiceEps);
  Tensor dice_loss = scalar_add(scalar_mul(div(numer, denom), -1.0), 1.0);

  return add(scalar_mul(bce, lambda), scalar_mul(dice_loss, 1.0 - lambda));
}

void adam_step(std::span<const NamedParam> params, std::span<const std::vector<double>> grads,
               AdamState& state, const TrainConfig& config) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].tensor->numel()), 0.0);
      state.v[i].assign(static_cast<size_t>(params[i].tensor->numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks a different parameter count");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const size_t n = static_cast<size_t>(params[i].tensor->numel());
    if (grads[i].size() != n || state.m[i].size() != n) {
      throw std::invalid_argument("adam_step: shape mismatch for parameter " + params[i].name);
    }
    std::vector<double> values(params[i].tensor->values().begin(),
                               params[i].tensor->values().end());
    for (size_t j = 0; j < n; ++j) {
      const double g = grads[i][j];
      state.m[i][j] = config.beta1 * state.m[i][j] + (1.0 - config.beta1) * g;
      state.v[i][j] = config.beta2 * state.v[i][j] + (1.0 - config.beta2) * g * g;
      const double m_hat = state.m[i][j] / bc1;
      const double v_hat = state.v[i][j] / bc2;
      values[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
    }
    params[i].tensor->set_values(std::move(values));
  }
}

namespace {

void fisher_yates(std::vector<int>& order, Rng& rng) {
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

TrainLog train(SegModel& model, std::span<const Sample> train_set,
               const std::vector<Sample>* val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");

  auto params = model.parameters();
  AdamState state;
  TrainLog log;
  Rng shuffle_rng(config.seed);
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first draw
  long samples_seen = 0;
  long epochs_done = 0;

  for (int step = 1; step <= config.steps; ++step) {
    try {
      std::vector<int> batch;
      batch.reserve(static_cast<size_t>(config.batch_size));
      for (int b = 0; b < config.batch_size; ++b) {
        if (cursor == order.size()) {
          fisher_yates(order, shuffle_rng);
          cursor = 0;
        }
        batch.push_back(order[cursor++]);
        ++samples_seen;
      }

      Graph g;
      attach_all(g, params);
      Tensor total;
      for (int idx : batch) {
        Tensor pred = model.forward(train_set[static_cast<size_t>(idx)].image);
        Tensor sample_loss =
            bce_dice_loss(pred, train_set[static_cast<size_t>(idx)].mask, config.loss_mix);
        total = total.empty() ? sample_loss : add(total, sample_loss);
      }
      Tensor loss = scalar_mul(total, 1.0 / static_cast<double>(batch.size()));
      double loss_value = loss.scalar_value();
      if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");
      g.backward(loss);

      std::vector<std::vector<double>> grads(params.size());
      double sq_norm = 0.0;
      for (size_t i = 0; i < params.size(); ++i) {
        auto gr = g.grad(*params[i].tensor);
        grads[i].assign(gr.begin(), gr.end());
        for (double v : gr) sq_norm += v * v;
      }
      detach_all(params);
      adam_step(params, grads, state, config);
      log.steps.push_back({step, loss_value, std::sqrt(sq_norm)});
    } catch (const std::exception& e) {
      detach_all(params);
      throw std::runtime_error("train: aborted at step " + std::to_string(step) + ": " + e.what());
    }

    long epochs_now = samples_seen / static_cast<long>(train_set.size());
    if (epochs_now > epochs_done) {
      epochs_done = epochs_now;
      if (val_set != nullptr && !val_set->empty()) {
        log.validations.push_back(
            {static_cast<int>(epochs_done), dataset_report(*val_set, model)});
      }
    }
  }
  detach_all(params);
  return log;
}

GradcheckReport gradcheck(const std::function<Tensor(Graph&)>& build_loss,
                          std::span<const NamedParam> params, GradcheckOptions options) {
  GradcheckReport rep;
  std::vector<std::vector<double>> analytic(params.size());
  {
    Graph g;
    attach_all(g, params);
    Tensor loss = build_loss(g);
    if (loss.numel() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
    g.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) {
      auto gr = g.grad(*params[i].tensor);
      analytic[i].assign(gr.begin(), gr.end());
    }
    detach_all(params);
  }

  auto eval = [&build_loss]() {
    Graph scratch;
    return build_loss(scratch).scalar_value();
  };

  Rng rng(options.seed);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    const int n = t.numel();
    bool exhaustive = n <= options.max_coords_per_tensor;
    for (const std::string& tag : options.exhaustive_name_substrings) {
      exhaustive |= params[i].name.find(tag) != std::string::npos;
    }
    std::vector<int> coords;
    if (exhaustive) {
      coords.resize(static_cast<size_t>(n));
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < options.max_coords_per_tensor) {
        chosen.insert(rng.uniform_int(0, n - 1));
      }
      coords.assign(chosen.begin(), chosen.end());
    }
    double worst = 0.0;
    for (int idx : coords) {
      const double orig = t.values()[static_cast<size_t>(idx)];
      t.set_flat(idx, orig + options.eps);
      const double up = eval();
      t.set_flat(idx, orig - options.eps);
      const double down = eval();
      t.set_flat(idx, orig);
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[i][static_cast<size_t>(idx)];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    rep.per_param.push_back({params[i].name, worst});
    if (worst >= rep.max_rel_err) {
      rep.max_rel_err = worst;
      rep.worst_param = params[i].name;
    }
  }
  return rep;
}

}  // namespace axiseg
