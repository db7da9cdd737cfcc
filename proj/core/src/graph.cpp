#include "axiseg/graph.hpp"

#include <stdexcept>

namespace axiseg {

int Graph::add_leaf(int numel) {
  nodes_.push_back(NodeRec{{}, numel, nullptr});
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::add_node(int numel, std::vector<int> inputs, BackwardFn backward) {
  nodes_.push_back(NodeRec{std::move(inputs), numel, std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::backward(const Tensor& loss) {
  if (backward_done_) throw std::runtime_error("backward: graph already swept");
  if (loss.graph() != this) throw std::invalid_argument("backward: loss is not on this graph");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape().str());
  }

  grads_.resize(nodes_.size());
  touched_.assign(nodes_.size(), 0);
  for (size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].assign(static_cast<size_t>(nodes_[i].numel), 0.0);
  }
  grads_[static_cast<size_t>(loss.node())][0] = 1.0;
  touched_[static_cast<size_t>(loss.node())] = 1;

  for (int id = loss.node(); id >= 0; --id) {
    const NodeRec& node = nodes_[static_cast<size_t>(id)];
    if (!node.backward || !touched_[static_cast<size_t>(id)]) continue;
    std::vector<std::span<double>> dinputs;
    dinputs.reserve(node.inputs.size());
    for (int in : node.inputs) {
      if (in < 0) {
        dinputs.emplace_back();
      } else {
        touched_[static_cast<size_t>(in)] = 1;
        dinputs.emplace_back(grads_[static_cast<size_t>(in)]);
      }
    }
    node.backward(grads_[static_cast<size_t>(id)], dinputs);
  }
  backward_done_ = true;
}

std::span<const double> Graph::grad(const Tensor& t) const {
  if (!backward_done_) throw std::runtime_error("grad: backward has not run");
  if (t.graph() != this) throw std::invalid_argument("grad: tensor is not on this graph");
  return grads_[static_cast<size_t>(t.node())];
}

void attach_all(Graph& g, std::span<const NamedParam> params) {
  for (const NamedParam& p : params) p.tensor->attach(g);
}

void detach_all(std::span<const NamedParam> params) {
  for (const NamedParam& p : params) p.tensor->detach();
}

}  // namespace axiseg
