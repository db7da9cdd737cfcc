#include "axiseg/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "axiseg/graph.hpp"

namespace axiseg {

Shape::Shape(std::initializer_list<int> dims) : Shape(std::vector<int>(dims)) {}

Shape::Shape(std::vector<int> dims) : dims_(std::move(dims)) {
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("Shape: every extent must be >= 1, got " + str());
  }
}

int Shape::numel() const {
  int n = 1;
  for (int d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  int n = shape.numel();
  return from_values(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  if (static_cast<int>(values.size()) != shape.numel()) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape.str());
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::scalar(double value) { return from_values(Shape{1}, {value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(shape.numel()));
  for (double& x : v) x = rng.uniform(lo, hi);
  return from_values(std::move(shape), std::move(v));
}

std::span<const double> Tensor::values() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::at(int i) const { return (*data_)[static_cast<size_t>(i)]; }

double Tensor::at(int i, int j) const {
  return (*data_)[static_cast<size_t>(i) * shape_.dim(1) + j];
}

double Tensor::at(int i, int j, int k) const {
  return (*data_)[(static_cast<size_t>(i) * shape_.dim(1) + j) * shape_.dim(2) + k];
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw std::invalid_argument("scalar_value: tensor has shape " + shape_.str());
  return (*data_)[0];
}

void Tensor::set_values(std::vector<double> values) {
  if (static_cast<int>(values.size()) != shape_.numel()) {
    throw std::invalid_argument("set_values: size mismatch for shape " + shape_.str());
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

void Tensor::set_flat(int index, double value) {
  std::vector<double> copy = *data_;
  copy[static_cast<size_t>(index)] = value;
  data_ = std::make_shared<const std::vector<double>>(std::move(copy));
}

void Tensor::attach(Graph& g) {
  if (graph_ == &g) return;
  graph_ = &g;
  node_ = g.add_leaf(numel());
}

void Tensor::detach() {
  graph_ = nullptr;
  node_ = -1;
}

Tensor Tensor::make_node_result(Shape shape, std::vector<double> values, Graph* g, int node) {
  Tensor t = from_values(std::move(shape), std::move(values));
  t.graph_ = g;
  t.node_ = node;
  return t;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

// xoshiro256**
std::uint64_t Rng::next_u64() {
  std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double sigma) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + sigma * spare_;
  }
  // Box-Muller on open-interval uniforms.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + sigma * r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  auto span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

}  // namespace axiseg
