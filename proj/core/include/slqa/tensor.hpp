#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace slqa {

// Shapes are rank-1 or rank-2 throughout; rank-2 is row-major.
using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float array with an optional gradient buffer. A Tensor is a
// cheap handle onto a shared node; copies alias the same storage. Values
// produced by an op are never mutated afterwards — the only sanctioned
// in-place writes are parameter updates between tapes (raw()) and gradient
// accumulation during backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int axis) const;
  int size() const;
  // Rank-2 views; a rank-1 tensor counts as a single row.
  int rows() const;
  int cols() const;

  std::span<const double> values() const;
  std::span<double> raw();  // parameter mutation only
  double at(int i) const;
  double at(int r, int c) const;

  bool requires_grad() const;
  // Empty span until a backward pass (or accumulate_grad) touches this node.
  std::span<const double> grad() const;
  double grad_at(int i) const;  // 0 when no gradient has been accumulated
  std::span<double> grad_data();  // allocates zeros on first use
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  // Identity of the underlying node; used for registration bookkeeping.
  const void* id() const { return node_.get(); }

  // True if every value is finite.
  bool all_finite() const;

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;

  static Tensor make(Shape shape, std::vector<double> values,
                     bool requires_grad);
  friend class Tape;
};

// Reverse-mode tape. Ops append one entry per result in evaluation order,
// so the entry list is topologically sorted by construction; backward()
// walks it once in reverse, pulling output gradients into input gradients.
// Repeated backward() calls accumulate (gradients are not reset here).
// A Tape and its in-flight gradients belong to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a recorded op. `pull` must add d(output) contributions into
  // the grad buffers of those inputs that require grad.
  void record(Tensor output, std::vector<Tensor> inputs,
              std::function<void()> pull);

  // Seeds d(loss)=1 and replays the tape in reverse. `loss` must be a
  // scalar produced on this tape.
  void backward(const Tensor& loss);

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
};

}  // namespace slqa
