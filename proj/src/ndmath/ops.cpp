#include "jebgfn/ndmath/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gemm.hpp"

namespace jebgfn::nd {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

Tensor finish(const char* op, Shape shape, std::vector<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite output");
  }
  return Tensor::constant(std::move(shape), std::move(values));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Records `fn` on the active tape when one exists and some input needs a
// gradient.
void maybe_record(std::initializer_list<const Tensor*> inputs, const Tensor& out,
                  Tape::BackwardFn fn) {
  Tape* tape = Tape::active();
  if (tape == nullptr || !any_requires_grad(inputs)) return;
  std::vector<NodePtr> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor* t : inputs) nodes.push_back(t->node());
  tape->record(std::move(nodes), out.node(), std::move(fn));
}

// Gradient buffer of an input, or nullptr if it takes none.
double* grad_of(const NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) shape_error(op, "expected rank 2, got " + shape_string(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(m * n);
  detail::gemm(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor result = finish("matmul", {m, n}, std::move(out));
  NodePtr an = a.node(), bn = b.node();
  maybe_record({&a, &b}, result, [an, bn, m, k, n](const TensorNode& o) {
    if (double* ga = grad_of(an)) {
      // dA = dC * B^T
      std::vector<double> bt = detail::transpose(bn->value.data(), k, n);
      std::vector<double> tmp(m * k);
      detail::gemm(o.grad.data(), bt.data(), tmp.data(), m, n, k);
      for (std::size_t i = 0; i < m * k; ++i) ga[i] += tmp[i];
    }
    if (double* gb = grad_of(bn)) {
      // dB = A^T * dC
      std::vector<double> at = detail::transpose(an->value.data(), m, k);
      std::vector<double> tmp(k * n);
      detail::gemm(at.data(), o.grad.data(), tmp.data(), k, m, n);
      for (std::size_t i = 0; i < k * n; ++i) gb[i] += tmp[i];
    }
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor result = finish("add", a.shape(), std::move(out));
  NodePtr an = a.node(), bn = b.node();
  maybe_record({&a, &b}, result, [an, bn](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (double* gb = grad_of(bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
  });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Tensor result = finish("sub", a.shape(), std::move(out));
  NodePtr an = a.node(), bn = b.node();
  maybe_record({&a, &b}, result, [an, bn](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (double* gb = grad_of(bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor result = finish("mul", a.shape(), std::move(out));
  NodePtr an = a.node(), bn = b.node();
  maybe_record({&a, &b}, result, [an, bn](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bn->value[i];
    if (double* gb = grad_of(bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * an->value[i];
  });
  return result;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
  Tensor result = finish("scale", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, s](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * s;
  });
  return result;
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + s;
  Tensor result = finish("add_scalar", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
  return result;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_rank2("add_bias", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != n)
    shape_error("add_bias", shape_string(a.shape()) + " + " + shape_string(bias.shape()));
  std::vector<double> out(m * n);
  const auto av = a.values();
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  Tensor result = finish("add_bias", {m, n}, std::move(out));
  NodePtr an = a.node(), bn = bias.node();
  maybe_record({&a, &bias}, result, [an, bn, m, n](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += o.grad[i];
    if (double* gb = grad_of(bn)) {
      std::vector<double> local(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) local[j] += o.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gb[j] += local[j];
    }
  });
  return result;
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  Tensor result = finish("relu", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (an->value[i] > 0.0) ga[i] += o.grad[i];
  });
  return result;
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  Tensor result = finish("tanh", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += (1.0 - o.value[i] * o.value[i]) * o.grad[i];
  });
  return result;
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * a.at(i);
  Tensor result = finish("square", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += 2.0 * an->value[i] * o.grad[i];
  });
  return result;
}

namespace {

// Log-softmax over `count` entries spaced `stride` apart, restricted to
// entries where valid(idx) is true.
template <typename Valid>
void log_softmax_line(const double* in, double* out, std::size_t count, std::size_t stride,
                      Valid valid) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < count; ++j)
    if (valid(j)) mx = std::max(mx, in[j * stride]);
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("log_softmax: no valid entry in a row");
  double s = 0.0;
  for (std::size_t j = 0; j < count; ++j)
    if (valid(j)) s += std::exp(in[j * stride] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < count; ++j)
    out[j * stride] = valid(j) ? in[j * stride] - lse : kMaskedLogProb;
}

// d/dx of log-softmax: g_x = g - softmax * sum(g) over valid entries.
template <typename Valid>
void log_softmax_line_grad(const double* out, const double* gout, double* gin, std::size_t count,
                           std::size_t stride, Valid valid) {
  double gs = 0.0;
  for (std::size_t j = 0; j < count; ++j)
    if (valid(j)) gs += gout[j * stride];
  for (std::size_t j = 0; j < count; ++j)
    if (valid(j)) gin[j * stride] += gout[j * stride] - std::exp(out[j * stride]) * gs;
}

}  // namespace

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  if (a.rank() == 0 || a.rank() > 2 || axis >= a.rank())
    shape_error("log_softmax", "axis " + std::to_string(axis) + " for " + shape_string(a.shape()));
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const bool along_cols = a.rank() == 1 || axis == 1;
  const std::size_t lines = along_cols ? rows : cols;
  const std::size_t count = along_cols ? cols : rows;
  const std::size_t stride = along_cols ? 1 : cols;
  auto line_start = [=](std::size_t l) { return along_cols ? l * cols : l; };
  auto all = [](std::size_t) { return true; };

  std::vector<double> out(a.size());
  for (std::size_t l = 0; l < lines; ++l)
    log_softmax_line(a.values().data() + line_start(l), out.data() + line_start(l), count, stride,
                     all);
  Tensor result = finish("log_softmax", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, lines, count, stride, line_start, all](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t l = 0; l < lines; ++l)
        log_softmax_line_grad(o.value.data() + line_start(l), o.grad.data() + line_start(l),
                              ga + line_start(l), count, stride, all);
  });
  return result;
}

Tensor masked_log_softmax(const Tensor& a, std::span<const std::uint8_t> mask) {
  require_rank2("masked_log_softmax", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (mask.size() != m * n)
    shape_error("masked_log_softmax", "mask size " + std::to_string(mask.size()) + " for " +
                                          shape_string(a.shape()));
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* row_mask = keep.data() + i * n;
    log_softmax_line(a.values().data() + i * n, out.data() + i * n, n, 1,
                     [row_mask](std::size_t j) { return row_mask[j] != 0; });
  }
  Tensor result = finish("masked_log_softmax", a.shape(), std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, m, n, keep = std::move(keep)](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < m; ++i) {
        const std::uint8_t* row_mask = keep.data() + i * n;
        log_softmax_line_grad(o.value.data() + i * n, o.grad.data() + i * n, ga + i * n, n, 1,
                              [row_mask](std::size_t j) { return row_mask[j] != 0; });
      }
  });
  return result;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result = finish("sum", {}, {s});
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += o.grad[0];
  });
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) shape_error("mean", "empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result = finish("mean", {}, {s * inv});
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, inv](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += o.grad[0] * inv;
  });
  return result;
}

Tensor segment_sum(const Tensor& a, std::span<const std::size_t> segment, std::size_t segments) {
  const bool column = a.rank() == 2 && a.dim(1) == 1;
  if (a.rank() != 1 && !column) shape_error("segment_sum", "expected rank 1, got " + shape_string(a.shape()));
  if (segment.size() != a.size()) shape_error("segment_sum", "segment ids do not match input length");
  std::vector<std::size_t> ids(segment.begin(), segment.end());
  std::vector<double> out(segments, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= segments) shape_error("segment_sum", "segment id out of range");
    out[ids[i]] += a.at(i);
  }
  Tensor result = finish("segment_sum", {segments}, std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, ids = std::move(ids)](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < ids.size(); ++i) ga[i] += o.grad[ids[i]];
  });
  return result;
}

Tensor group_sum(const Tensor& a, std::size_t group) {
  require_rank2("group_sum", a);
  if (group == 0 || a.dim(0) % group != 0)
    shape_error("group_sum", "group " + std::to_string(group) + " for " + shape_string(a.shape()));
  const std::size_t m = a.dim(0) / group, n = a.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t g = 0; g < group; ++g)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av[(i * group + g) * n + j];
  Tensor result = finish("group_sum", {m, n}, std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, m, n, group](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t g = 0; g < group; ++g)
          for (std::size_t j = 0; j < n; ++j) ga[(i * group + g) * n + j] += o.grad[i * n + j];
  });
  return result;
}

Tensor gather_columns(const Tensor& a, std::span<const std::size_t> column) {
  require_rank2("gather_columns", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (column.size() != m) shape_error("gather_columns", "one column index per row required");
  std::vector<std::size_t> cols(column.begin(), column.end());
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) shape_error("gather_columns", "column index out of range");
    out[i] = a.at(i * n + cols[i]);
  }
  Tensor result = finish("gather_columns", {m}, std::move(out));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an, n, cols = std::move(cols)](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < cols.size(); ++i) ga[i * n + cols[i]] += o.grad[i];
  });
  return result;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> index) {
  return embedding_bag(table, index, 1);
}

Tensor embedding_bag(const Tensor& table, std::span<const std::size_t> index, std::size_t per_row) {
  require_rank2("embedding_bag", table);
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  if (per_row == 0 || index.size() % per_row != 0)
    shape_error("embedding_bag", "index length not a multiple of " + std::to_string(per_row));
  const std::size_t m = index.size() / per_row;
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(m * h, 0.0);
  const auto tv = table.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < per_row; ++s) {
      const std::size_t r = idx[i * per_row + s];
      if (r >= vocab) shape_error("embedding_bag", "index " + std::to_string(r) + " out of range");
      const double* src = tv.data() + r * h;
      double* dst = out.data() + i * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  Tensor result = finish("embedding_bag", {m, h}, std::move(out));
  NodePtr tn = table.node();
  maybe_record({&table}, result, [tn, h, per_row, idx = std::move(idx)](const TensorNode& o) {
    double* gt = grad_of(tn);
    if (gt == nullptr) return;
    // Sum this op's contribution first so that mirrored branches cancel exactly.
    std::vector<double> local(tn->value.size(), 0.0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double* src = o.grad.data() + (k / per_row) * h;
      double* dst = local.data() + idx[k] * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
    for (std::size_t i = 0; i < local.size(); ++i) gt[i] += local[i];
  });
  return result;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank() || a.rank() == 0 || a.rank() > 2 || axis >= a.rank())
    shape_error("concat", shape_string(a.shape()) + " with " + shape_string(b.shape()));
  if (a.rank() == 1 || axis == 0) {
    if (a.rank() == 2 && a.dim(1) != b.dim(1)) shape_error("concat", "column count mismatch");
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<double> out(a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    Tensor result = finish("concat", std::move(shape), std::move(out));
    NodePtr an = a.node(), bn = b.node();
    const std::size_t split = a.size();
    maybe_record({&a, &b}, result, [an, bn, split](const TensorNode& o) {
      if (double* ga = grad_of(an))
        for (std::size_t i = 0; i < split; ++i) ga[i] += o.grad[i];
      if (double* gb = grad_of(bn))
        for (std::size_t i = split; i < o.grad.size(); ++i) gb[i - split] += o.grad[i];
    });
    return result;
  }
  const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
  if (b.dim(0) != m) shape_error("concat", "row count mismatch");
  const std::size_t n = na + nb;
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < na; ++j) out[i * n + j] = a.at(i * na + j);
    for (std::size_t j = 0; j < nb; ++j) out[i * n + na + j] = b.at(i * nb + j);
  }
  Tensor result = finish("concat", {m, n}, std::move(out));
  NodePtr an = a.node(), bn = b.node();
  maybe_record({&a, &b}, result, [an, bn, m, na, nb, n](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) ga[i * na + j] += o.grad[i * n + j];
    if (double* gb = grad_of(bn))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) gb[i * nb + j] += o.grad[i * n + na + j];
  });
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    shape_error("reshape", shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor result = Tensor::constant(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  NodePtr an = a.node();
  maybe_record({&a}, result, [an](const TensorNode& o) {
    if (double* ga = grad_of(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
  return result;
}

}  // namespace jebgfn::nd
