#include "slqa/tensor.hpp"

#include <cmath>
#include <sstream>

#include "slqa/error.hpp"

namespace slqa {

int shape_size(const Shape& s) {
  int n = 1;
  for (const int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << "x";
    out << s[i];
  }
  out << ")";
  return out.str();
}

Tensor Tensor::make(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape.empty() || shape.size() > 2)
    throw DimensionError("tensor rank must be 1 or 2, got shape " +
                         shape_str(shape));
  for (const int d : shape)
    if (d <= 0)
      throw DimensionError("tensor dims must be positive, got " +
                           shape_str(shape));
  if (static_cast<int>(values.size()) != shape_size(shape))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const int n = shape_size(shape);
  return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const int n = shape_size(shape);
  return make(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return make(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make({1, 1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int Tensor::dim(int axis) const { return node_->shape.at(axis); }
int Tensor::size() const { return static_cast<int>(node_->values.size()); }

int Tensor::rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
int Tensor::cols() const {
  return rank() == 1 ? node_->shape[0] : node_->shape[1];
}

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::raw() { return node_->values; }

double Tensor::at(int i) const { return node_->values.at(i); }
double Tensor::at(int r, int c) const {
  return node_->values.at(static_cast<std::size_t>(r) * cols() + c);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::grad() const { return node_->grad; }

double Tensor::grad_at(int i) const {
  if (node_->grad.empty()) return 0.0;
  return node_->grad.at(i);
}

std::span<double> Tensor::grad_data() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != node_->values.size())
    throw DimensionError("gradient size mismatch for shape " +
                         shape_str(node_->shape));
  auto dst = grad_data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool Tensor::all_finite() const {
  for (const double v : node_->values)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tape::record(Tensor output, std::vector<Tensor> inputs,
                  std::function<void()> pull) {
  if (!recording_) return;
  entries_.push_back({std::move(output), std::move(inputs), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  bool on_tape = false;
  for (const auto& e : entries_)
    if (e.output.id() == loss.id()) {
      on_tape = true;
      break;
    }
  if (!on_tape)
    throw ContractError("backward: loss was not produced on this tape");
  Tensor seed = loss;
  seed.grad_data()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Skip subgraphs nothing differentiable depends on.
    if (!it->output.requires_grad()) continue;
    if (it->output.grad().empty()) continue;
    it->pull();
  }
}

}  // namespace slqa
