#pragma once

// Dense 64-bit tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to a node holding shape, values and a lazily
// allocated gradient. Operations record themselves on the thread's active
// Tape (see TapeScope) whenever at least one input requires a gradient.
// Without an active tape the same operations run as plain inference.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace jebgfn::nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;     // set once backward() has run from this node
  std::int64_t tape_id = -1;

  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const TensorNode& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::shared_ptr<TensorNode>> inputs,
              const std::shared_ptr<TensorNode>& out, BackwardFn fn);

  /// Propagates d(loss)/d(.) to every reachable node, then clears the tape.
  /// A loss that does not require gradients is a no-op.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear();

  /// The tape operations currently record onto, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Entry {
    std::shared_ptr<TensorNode> out;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the active tape of the calling thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace jebgfn::nd
