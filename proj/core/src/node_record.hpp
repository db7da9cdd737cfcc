#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "axiseg/graph.hpp"
#include "axiseg/tensor.hpp"

namespace axiseg::detail {

inline void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in forward result");
    }
  }
}

/// Builds an op result: verifies finiteness, finds the common graph of the
/// tracked operands (mixing graphs is an error) and records the node. Null
/// operand pointers stand for absent optional operands.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::span<const Tensor* const> operands, BackwardFn backward) {
  check_finite(values, op);
  Graph* g = nullptr;
  for (const Tensor* t : operands) {
    if (t == nullptr || !t->tracked()) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw std::invalid_argument(std::string(op) + ": operands live on different graphs");
    }
  }
  if (g == nullptr) {
    return Tensor::from_values(std::move(shape), std::move(values));
  }
  std::vector<int> inputs;
  inputs.reserve(operands.size());
  for (const Tensor* t : operands) {
    inputs.push_back(t != nullptr && t->tracked() ? t->node() : -1);
  }
  int node = g->add_node(shape.numel(), std::move(inputs), std::move(backward));
  return Tensor::make_node_result(std::move(shape), std::move(values), g, node);
}

}  // namespace axiseg::detail
