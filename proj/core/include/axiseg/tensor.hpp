#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace axiseg {

class Graph;
class Rng;

/// Ordered list of positive axis extents.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::vector<int> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int axis) const { return dims_[static_cast<size_t>(axis)]; }
  const std::vector<int>& dims() const { return dims_; }
  int numel() const;
  bool operator==(const Shape& other) const = default;
  std::string str() const;  // e.g. "[4x6]"

 private:
  std::vector<int> dims_;
};

/// Dense row-major f64 tensor. The payload is immutable and shared; in-place
/// setters copy on write. A tensor may carry a handle into a Graph, in which
/// case operations consuming it record gradient rules on that graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);  // shape [1]
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool empty() const { return data_ == nullptr; }
  const Shape& shape() const { return shape_; }
  int numel() const { return shape_.numel(); }
  std::span<const double> values() const;
  const double* data() const { return data_->data(); }

  double at(int i) const;
  double at(int i, int j) const;
  double at(int i, int j, int k) const;
  double scalar_value() const;  // requires numel == 1

  // Copy-on-write mutation; detaches nothing (the graph keeps the old buffer).
  void set_values(std::vector<double> values);
  void set_flat(int index, double value);

  bool tracked() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  /// Registers this tensor as a leaf on g (idempotent per graph).
  void attach(Graph& g);
  void detach();

  // Used by operations to hand out results bound to a graph node.
  static Tensor make_node_result(Shape shape, std::vector<double> values, Graph* g, int node);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

/// A named handle onto a parameter tensor owned by a layer or model.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

/// Deterministic random stream (engine + explicit derivations, so results do
/// not depend on the standard library's distribution internals).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal(double mean, double sigma);
  int uniform_int(int lo, int hi);         // inclusive bounds

 private:
  std::uint64_t state_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace axiseg
