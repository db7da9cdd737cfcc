#pragma once

#include <functional>
#include <span>
#include <vector>

#include "axiseg/tensor.hpp"

namespace axiseg {

/// Gradient rule of one recorded operation. `dy` is the output gradient;
/// `dinputs` holds one accumulation span per recorded input, empty where the
/// corresponding operand was untracked.
using BackwardFn = std::function<void(std::span<const double> dy, std::span<std::span<double>> dinputs)>;

/// Append-only tape of operations. Topological order is creation order;
/// backward() visits nodes strictly in reverse creation order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int add_leaf(int numel);
  int add_node(int numel, std::vector<int> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once. `loss` must be a
  /// scalar recorded on this graph. May only run once per graph.
  void backward(const Tensor& loss);

  bool backward_done() const { return backward_done_; }
  std::span<const double> grad(const Tensor& t) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct NodeRec {
    std::vector<int> inputs;  // node ids; -1 marks an untracked operand
    int numel;
    BackwardFn backward;      // empty for leaves
  };

  std::vector<NodeRec> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> touched_;
  bool backward_done_ = false;
};

/// Registers every parameter in `params` as a leaf on g.
void attach_all(Graph& g, std::span<const NamedParam> params);
void detach_all(std::span<const NamedParam> params);

}  // namespace axiseg
