#include "jebgfn/ndmath/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace jebgfn::nd {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(numel(shape), 0.0);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != numel(shape)) {
    throw std::invalid_argument("Tensor::constant: " + std::to_string(values.size()) +
                                " values for shape " + shape_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw std::invalid_argument("Tensor::item on shape " + shape_string(node_->shape));
  }
  return node_->value[0];
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tape::record(std::vector<std::shared_ptr<TensorNode>> inputs,
                  const std::shared_ptr<TensorNode>& out, BackwardFn fn) {
  out->requires_grad = true;
  out->tape_id = static_cast<std::int64_t>(entries_.size());
  entries_.push_back(Entry{out, std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  TensorNode& root = *loss.node();
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(root.shape));
  }
  if (root.consumed) {
    throw std::logic_error("backward: called twice on the same loss without a new forward pass");
  }
  root.consumed = true;
  if (!root.requires_grad) return;
  if (root.tape_id < 0) {
    // Leaf parameter used directly as the loss.
    root.ensure_grad();
    root.grad[0] += 1.0;
    return;
  }
  if (root.tape_id >= static_cast<std::int64_t>(entries_.size()) ||
      entries_[root.tape_id].out.get() != &root) {
    throw std::logic_error("backward: loss was not recorded on this tape");
  }
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    it->fn(*it->out);
  }
  clear();
}

void Tape::clear() {
  for (auto& e : entries_) e.out->tape_id = -1;
  entries_.clear();
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

}  // namespace jebgfn::nd
