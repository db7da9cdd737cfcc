#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "axiseg/data.hpp"
#include "axiseg/segmodel.hpp"
#include "axiseg/tensor.hpp"

namespace axiseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

struct MetricsReport {
  double iou = 0, precision = 0, recall = 0, f1 = 0, dice = 0;

  /// `iou,precision,recall,f1,dice` with 4 decimal places.
  std::string csv_row() const;
};

/// 1 where pred >= tau, else 0 (ties go positive).
Tensor threshold(const Tensor& pred, double tau = 0.5);

/// Exact per-pixel counts; inputs must be binary and of equal shape.
ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& true_mask);

/// Standard ratios. Zero-denominator convention: every metric is 1.0 when
/// both masks are empty (tp+fp+fn == 0), otherwise a metric with a zero
/// denominator is 0.0.
MetricsReport report(const ConfusionCounts& counts);

/// Micro-average: counts summed over all samples, then one report.
MetricsReport dataset_report(std::span<const Sample> samples, const SegModel& model,
                             double tau = 0.5);

}  // namespace axiseg
