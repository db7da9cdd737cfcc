#include "axiseg/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace axiseg {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

std::string MetricsReport::csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f,%.4f", iou, precision, recall, f1, dice);
  return buf;
}

Tensor threshold(const Tensor& pred, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("threshold: tau " + std::to_string(tau) + " outside [0, 1]");
  }
  std::vector<double> out(pred.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = pred.values()[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("threshold: prediction outside [0, 1]");
    }
    out[i] = v >= tau ? 1.0 : 0.0;
  }
  return Tensor::from_values(pred.shape(), std::move(out));
}

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& true_mask) {
  if (!(pred_mask.shape() == true_mask.shape())) {
    throw std::invalid_argument("confusion: shape mismatch " + pred_mask.shape().str() + " vs " +
                                true_mask.shape().str());
  }
  ConfusionCounts c;
  for (size_t i = 0; i < pred_mask.values().size(); ++i) {
    double p = pred_mask.values()[i], t = true_mask.values()[i];
    if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0)) {
      throw std::invalid_argument("confusion: non-binary mask value");
    }
    if (p == 1.0 && t == 1.0) ++c.tp;
    else if (p == 1.0) ++c.fp;
    else if (t == 1.0) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport report(const ConfusionCounts& c) {
  MetricsReport r;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp + c.fn == 0) {
    // both masks empty: perfect by convention
    r.iou = r.precision = r.recall = r.f1 = r.dice = 1.0;
    return r;
  }
  r.iou = tp / static_cast<double>(c.tp + c.fp + c.fn);
  r.precision = (c.tp + c.fp) > 0 ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = (c.tp + c.fn) > 0 ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  r.dice = 2.0 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

MetricsReport dataset_report(std::span<const Sample> samples, const SegModel& model, double tau) {
  if (samples.empty()) throw std::invalid_argument("dataset_report: empty sample list");
  ConfusionCounts total;
  for (const Sample& s : samples) {
    Tensor pred = model.forward(s.image);
    total += confusion(threshold(pred, tau), s.mask);
  }
  return report(total);
}

}  // namespace axiseg
