#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "axiseg/data.hpp"
#include "axiseg/graph.hpp"
#include "axiseg/metrics.hpp"
#include "axiseg/segmodel.hpp"

namespace axiseg {

struct TrainConfig {
  int steps = 500;
  int batch_size = 4;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double loss_mix = 0.5;  // lambda * BCE + (1 - lambda) * DiceLoss
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainStepRecord {
  int step;
  double loss;
  double grad_norm;
};

struct ValidationRecord {
  int epoch;
  MetricsReport report;
};

struct TrainLog {
  std::vector<TrainStepRecord> steps;
  std::vector<ValidationRecord> validations;

  /// `step,loss,grad_norm` rows; validation rows `epoch,iou,precision,recall,f1,dice`
  /// follow under their own header when present.
  std::string to_csv() const;
};

/// lambda * BCE + (1 - lambda) * DiceLoss (epsilon 1.0), with predictions
/// clamped to [1e-7, 1 - 1e-7] inside the BCE term.
Tensor bce_dice_loss(const Tensor& pred, const Tensor& target, double lambda);

struct AdamState {
  long t = 0;
  std::vector<std::vector<double>> m, v;
};

/// One standard Adam update with bias correction; state is created lazily on
/// first use and its shapes are checked thereafter.
void adam_step(std::span<const NamedParam> params, std::span<const std::vector<double>> grads,
               AdamState& state, const TrainConfig& config);

/// Seeded-shuffle minibatch training; per-step records plus one validation
/// report per epoch when `val_set` is non-null. A non-finite loss aborts with
/// an error naming the step.
TrainLog train(SegModel& model, std::span<const Sample> train_set,
               const std::vector<Sample>* val_set, const TrainConfig& config);

struct GradcheckOptions {
  double eps = 1e-5;
  int max_coords_per_tensor = 24;  // larger tensors are coordinate-sampled
  std::uint64_t seed = 0;
  // Parameters whose name contains one of these are always checked at every
  // coordinate, regardless of size (gates and relative-position tables).
  std::vector<std::string> exhaustive_name_substrings = {"relpos", "gates"};
};

struct GradcheckParamReport {
  std::string name;
  double max_rel_err;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::vector<GradcheckParamReport> per_param;
};

/// Certifies the tape against central finite differences. `build_loss` must
/// produce a scalar from the attached `params`; relative error uses
/// denominator max(|analytic|, |numeric|, 1e-8).
GradcheckReport gradcheck(const std::function<Tensor(Graph&)>& build_loss,
                          std::span<const NamedParam> params, GradcheckOptions options = {});

}  // namespace axiseg
