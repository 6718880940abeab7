#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pscl/errors.hpp"

namespace pscl {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first backward touch
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-owning; set for tensors participating in a tape

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Value semantics over a shared
// buffer: ops produce fresh storage and never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorStorage>();
    const auto n = shape_numel(shape);
    t.d_->shape = std::move(shape);
    t.d_->value.assign(static_cast<std::size_t>(n), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw contract_error("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    Tensor t;
    t.d_ = std::make_shared<detail::TensorStorage>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return filled(Shape{}, v); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  std::int64_t dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->value.size()); }

  double* data() { return d_->value.data(); }
  const double* data() const { return d_->value.data(); }
  std::vector<double>& values() { return d_->value; }
  const std::vector<double>& values() const { return d_->value; }

  double item() const {
    check_contract(size() == 1, "tensor: item() requires a single-element tensor, got " +
                                    shape_str(shape()));
    return d_->value[0];
  }

  // 2-D accessors; callers keep index arithmetic local for other ranks.
  double& at(std::int64_t i, std::int64_t j) { return d_->value[static_cast<std::size_t>(i * dim(1) + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return d_->value[static_cast<std::size_t>(i * dim(1) + j)]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tape* tape() const { return d_ ? d_->tape : nullptr; }

  const std::vector<double>& grad() const {
    d_->ensure_grad();
    return d_->grad;
  }
  std::vector<double>& grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  bool grad_allocated() const { return d_ && !d_->grad.empty(); }

  void zero_grad() {
    if (d_) d_->grad.assign(d_->value.size(), 0.0);
  }

  bool all_finite() const {
    for (double v : d_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double min_value() const {
    double m = d_->value.empty() ? 0.0 : d_->value[0];
    for (double v : d_->value) m = std::min(m, v);
    return m;
  }
  double max_value() const {
    double m = d_->value.empty() ? 0.0 : d_->value[0];
    for (double v : d_->value) m = std::max(m, v);
    return m;
  }

  std::shared_ptr<detail::TensorStorage> storage() const { return d_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorStorage> d_;
};

// Reverse-mode tape. Ops append one node per result, so node order is a
// topological order of the forward graph; backward() walks it in reverse.
// clear() drops the nodes (and their captured buffers); leaf parameters are
// not node outputs and survive with their accumulated grads.
class Tape {
 public:
  struct Node {
    std::shared_ptr<detail::TensorStorage> out;
    std::function<void()> backward;
  };

  // Leaf parameter: participates in grad accumulation, has no producing node.
  Tensor leaf(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.storage()->requires_grad = true;
    t.storage()->tape = this;
    return t;
  }

  void adopt_leaf(Tensor& t) {
    t.storage()->requires_grad = true;
    t.storage()->tape = this;
  }

  void record(const Tensor& out, std::function<void()> backward) {
    nodes_.push_back(Node{out.storage(), std::move(backward)});
  }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates d(loss)/d(leaf) into every reachable leaf's grad. Node-output
  // grads are reset first so repeated calls accumulate exactly once per call.
  void backward(const Tensor& loss) {
    check_contract(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    check_contract(loss.tape() == this, "backward: loss was not produced on this tape");
    for (auto& n : nodes_) n.out->grad.assign(n.out->value.size(), 0.0);
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->backward();
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

// RAII pause for evaluation-mode forwards.
class TapePause {
 public:
  explicit TapePause(Tape* t) : tape_(t) {
    if (tape_) {
      was_ = tape_->recording();
      tape_->set_recording(false);
    }
  }
  ~TapePause() {
    if (tape_) tape_->set_recording(was_);
  }
  TapePause(const TapePause&) = delete;
  TapePause& operator=(const TapePause&) = delete;

 private:
  Tape* tape_;
  bool was_ = true;
};

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    Tape* tt = t->tape();
    if (!tt) continue;
    if (tape && tape != tt) throw contract_error("op: inputs belong to different tapes");
    tape = tt;
  }
  return tape;
}

// Marks `out` as a tape result when recording is active and any input needs
// gradients. Returns true when the node should be recorded.
inline bool wire_output(Tensor& out, std::initializer_list<const Tensor*> inputs) {
  Tape* tape = common_tape(inputs);
  if (!tape || !tape->recording()) return false;
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return false;
  out.storage()->requires_grad = true;
  out.storage()->tape = tape;
  return true;
}

inline void accumulate(const std::shared_ptr<TensorStorage>& s, std::size_t idx, double v) {
  s->ensure_grad();
  s->grad[idx] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::wire_output(out, {&a, &b})) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    out.tape()->record(out, [as, bs, os, n] {
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bs->grad[i] += os->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (detail::wire_output(out, {&a, &b})) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    out.tape()->record(out, [as, bs, os, n] {
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bs->grad[i] -= os->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::wire_output(out, {&a, &b})) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    out.tape()->record(out, [as, bs, os, n] {
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i] * bs->value[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bs->grad[i] += os->grad[i] * as->value[i];
      }
    });
  }
  return out;
}

inline Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    out.tape()->record(out, [as, os, c, n] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i] * c;
    });
  }
  return out;
}

inline Tensor add_const(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    out.tape()->record(out, [as, os, n] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i];
    });
  }
  return out;
}

// Scalar-by-scalar division; the loss ratios are the only division we need.
inline Tensor div_scalars(const Tensor& num, const Tensor& den) {
  check_contract(num.size() == 1 && den.size() == 1, "div_scalars: both operands must be scalar");
  Tensor out = Tensor::scalar(num.data()[0] / den.data()[0]);
  if (detail::wire_output(out, {&num, &den})) {
    auto ns = num.storage(), ds = den.storage(), os = out.storage();
    out.tape()->record(out, [ns, ds, os] {
      const double g = os->grad[0];
      const double a = ns->value[0], b = ds->value[0];
      if (ns->requires_grad) detail::accumulate(ns, 0, g / b);
      if (ds->requires_grad) detail::accumulate(ds, 0, -g * a / (b * b));
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto n = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (detail::wire_output(out, {&x})) {
    auto xs = x.storage(), os = out.storage();
    // subgradient at exactly 0 is 0
    out.tape()->record(out, [xs, os, n] {
      xs->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        if (xs->value[i] > 0.0) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

inline Tensor log_elem(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto n = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::log(x.data()[i]);
  if (detail::wire_output(out, {&x})) {
    auto xs = x.storage(), os = out.storage();
    out.tape()->record(out, [xs, os, n] {
      xs->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xs->grad[i] += os->grad[i] / xs->value[i];
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    const auto n = static_cast<std::size_t>(a.size());
    out.tape()->record(out, [as, os, n] {
      as->ensure_grad();
      const double g = os->grad[0];
      for (std::size_t i = 0; i < n; ++i) as->grad[i] += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  check_contract(a.size() > 0, "mean_all: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv);
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    const auto n = static_cast<std::size_t>(a.size());
    out.tape()->record(out, [as, os, n, inv] {
      as->ensure_grad();
      const double g = os->grad[0] * inv;
      for (std::size_t i = 0; i < n; ++i) as->grad[i] += g;
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  check_contract(a.rank() == 2, "transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    out.tape()->record(out, [as, os, m, n] {
      as->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) as->grad[static_cast<std::size_t>(i * n + j)] += os->grad[static_cast<std::size_t>(j * m + i)];
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw dim_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), a.values());
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    const auto n = static_cast<std::size_t>(a.size());
    out.tape()->record(out, [as, os, n] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) as->grad[i] += os->grad[i];
    });
  }
  return out;
}

// Columns [c0, c1) of a 2-D tensor as a fresh tensor.
inline Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  check_contract(a.rank() == 2, "slice_cols: expected rank-2 tensor");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  check_contract(0 <= c0 && c0 < c1 && c1 <= n, "slice_cols: range [" + std::to_string(c0) + "," +
                                                    std::to_string(c1) + ") out of " +
                                                    std::to_string(n) + " columns");
  const std::int64_t w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < w; ++j) out.data()[i * w + j] = a.data()[i * n + c0 + j];
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    out.tape()->record(out, [as, os, m, n, w, c0] {
      as->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          as->grad[static_cast<std::size_t>(i * n + c0 + j)] += os->grad[static_cast<std::size_t>(i * w + j)];
    });
  }
  return out;
}

// Diagonal of a square matrix as a vector.
inline Tensor diag(const Tensor& a) {
  check_contract(a.rank() == 2 && a.dim(0) == a.dim(1),
                 "diag: expected square matrix, got " + shape_str(a.shape()));
  const std::int64_t n = a.dim(0);
  Tensor out = Tensor::zeros({n});
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i * n + i];
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    out.tape()->record(out, [as, os, n] {
      as->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) as->grad[static_cast<std::size_t>(i * n + i)] += os->grad[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// out[i] = a[i, idx[i]]; the log-loss gather.
inline Tensor pick_per_row(const Tensor& a, const std::vector<int>& idx) {
  check_contract(a.rank() == 2, "pick_per_row: expected rank-2 tensor");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  check_contract(static_cast<std::int64_t>(idx.size()) == m, "pick_per_row: index count mismatch");
  for (std::int64_t i = 0; i < m; ++i)
    check_contract(idx[static_cast<std::size_t>(i)] >= 0 && idx[static_cast<std::size_t>(i)] < n,
                   "pick_per_row: label " + std::to_string(idx[static_cast<std::size_t>(i)]) +
                       " out of range at row " + std::to_string(i));
  Tensor out = Tensor::zeros({m});
  for (std::int64_t i = 0; i < m; ++i) out.data()[i] = a.data()[i * n + idx[static_cast<std::size_t>(i)]];
  if (detail::wire_output(out, {&a})) {
    auto as = a.storage(), os = out.storage();
    auto ix = idx;
    out.tape()->record(out, [as, os, m, n, ix] {
      as->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        as->grad[static_cast<std::size_t>(i * n + ix[static_cast<std::size_t>(i)])] += os->grad[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix product and row softmax
// ---------------------------------------------------------------------------

namespace detail {

// C += A(m x k) * B(k x n), row-major. ikj order keeps the inner loop
// contiguous in both B and C.
inline void matmul_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                       std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C += A^T(m x k -> k x m) * B(m x n)
inline void matmul_at_b_acc(const double* a, const double* b, double* c, std::int64_t m,
                            std::int64_t k, std::int64_t n) {
  for (std::int64_t p = 0; p < m; ++p) {
    const double* arow = a + p * k;
    const double* brow = b + p * n;
    for (std::int64_t i = 0; i < k; ++i) {
      const double v = arow[i];
      if (v == 0.0) continue;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

// C += A(m x k) * B^T(n x k -> k x n)
inline void matmul_a_bt_acc(const double* a, const double* b, double* c, std::int64_t m,
                            std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_contract(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw dim_error("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  detail::matmul_acc(a.data(), b.data(), out.data(), m, k, n);
  if (detail::wire_output(out, {&a, &b})) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    out.tape()->record(out, [as, bs, os, m, k, n] {
      if (as->requires_grad) {
        as->ensure_grad();  // dA += G * B^T
        detail::matmul_a_bt_acc(os->grad.data(), bs->value.data(), as->grad.data(), m, n, k);
      }
      if (bs->requires_grad) {
        bs->ensure_grad();  // dB += A^T * G
        detail::matmul_at_b_acc(as->value.data(), os->grad.data(), bs->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

// Bias add: (m x n) + (n) broadcast over rows. The only broadcast we support.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_contract(a.rank() == 2 && v.rank() == 1, "add_rowvec: expected (m x n) + (n)");
  if (a.dim(1) != v.dim(0))
    throw dim_error("add_rowvec: width mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(v.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.data()[i * n + j] = a.data()[i * n + j] + v.data()[j];
  if (detail::wire_output(out, {&a, &v})) {
    auto as = a.storage(), vs = v.storage(), os = out.storage();
    out.tape()->record(out, [as, vs, os, m, n] {
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < static_cast<std::size_t>(m * n); ++i) as->grad[i] += os->grad[i];
      }
      if (vs->requires_grad) {
        vs->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) vs->grad[static_cast<std::size_t>(j)] += os->grad[static_cast<std::size_t>(i * n + j)];
      }
    });
  }
  return out;
}

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  check_contract(x.rank() == 2 && x.dim(1) >= 1, "softmax_rows: expected (m x n), n >= 1");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double* oi = out.data() + i * n;
    double mx = xi[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      s += oi[j];
    }
    const double inv = 1.0 / s;
    for (std::int64_t j = 0; j < n; ++j) oi[j] *= inv;
  }
  if (detail::wire_output(out, {&x})) {
    auto xs = x.storage(), os = out.storage();
    // dZ_ij = S_ij * (g_ij - sum_k g_ik S_ik)
    out.tape()->record(out, [xs, os, m, n] {
      xs->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) {
        const double* s = os->value.data() + i * n;
        const double* g = os->grad.data() + i * n;
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) dot += g[j] * s[j];
        double* dx = xs->grad.data() + i * n;
        for (std::int64_t j = 0; j < n; ++j) dx[j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

}  // namespace pscl
