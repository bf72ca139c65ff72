#pragma once

// Reverse-mode autodiff on dense float32 tensors.
//
// Tensors are shared handles onto value/grad storage. Every differentiable
// op appends a backward closure to the thread-local Tape; append order is
// construction order, so walking the tape in reverse is a valid topological
// sweep. Storage is float32; tests check gradients against float64 central
// differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "todi/errors.hpp"
#include "todi/rng.hpp"

namespace todi {

struct TensorNode {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;  // sized like value iff requires_grad
  bool requires_grad = false;
  std::string name;  // parameters carry names for optimizer diagnostics
};

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class Tensor {
 public:
  Tensor() : node_(nullptr) {}
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode>();
    const auto n = shape_numel(shape);
    node->shape = std::move(shape);
    node->value.assign(static_cast<std::size_t>(n), 0.0f);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(static_cast<std::size_t>(n), 0.0f);
    return Tensor(node);
  }

  static Tensor constant(std::vector<int> shape, std::vector<float> data) {
    auto node = std::make_shared<TensorNode>();
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("constant: data size does not match shape " + shape_str(shape));
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(node);
  }

  static Tensor scalar(float v) { return constant({1, 1}, {v}); }

  // Named trainable parameter with the given initial values.
  static Tensor param(std::vector<int> shape, std::vector<float> data, std::string name) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    t.node_->grad.assign(t.node_->value.size(), 0.0f);
    t.node_->name = std::move(name);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  std::vector<float>& value() { return node_->value; }
  const std::vector<float>& value() const { return node_->value; }
  std::vector<float>& grad() { return node_->grad; }
  const std::vector<float>& grad() const { return node_->grad; }

  float item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Tape

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard: disables op recording (used for evaluation/sampling).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tape {
 public:
  struct Op {
    const char* name;
    std::function<void()> backward;
  };

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void record(const char* name, std::function<void()> backward) {
    ops_.push_back(Op{name, std::move(backward)});
  }

  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  // Reverse sweep from a scalar loss. Each recorded op runs exactly once.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
    if (!loss.requires_grad() || ops_.empty())
      throw ContractError("backward: loss is detached from the tape");
    if (consumed_) throw ContractError("backward: tape already consumed; call reset() first");
    loss.node()->grad[0] = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    consumed_ = true;
  }

  void reset() {
    ops_.clear();
    consumed_ = false;
  }

 private:
  std::vector<Op> ops_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Op helpers

namespace detail {

// Any NaN/Inf in a freshly computed tensor is an error, never silent.
// A single f64 accumulation detects every non-finite element: NaN poisons the
// sum, and infinities either survive or cancel to NaN.
inline void check_finite(const std::vector<float>& v, const char* op) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x);
  if (!std::isfinite(acc)) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i]))
        throw NumericError(std::string(op) + ": non-finite value at flat index " +
                           std::to_string(i));
    throw NumericError(std::string(op) + ": non-finite accumulation");
  }
}

inline bool want_grad(std::initializer_list<const Tensor*> ins) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor make_output(std::vector<int> shape, std::vector<float> value, bool track,
                          const char* op) {
  check_finite(value, op);
  Tensor out = Tensor::constant(std::move(shape), std::move(value));
  if (track) {
    out.node()->requires_grad = true;
    out.node()->grad.assign(out.node()->value.size(), 0.0f);
  }
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "add");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("add", [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "sub");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("sub", [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "hadamard");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("hadamard", [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i] * bn->value[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& a, float c) {
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "scale");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("scale", [an, yn, c] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i] * c;
    });
  }
  return y;
}

inline Tensor add_scalar(const Tensor& a, float c) {
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "add_scalar");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("add_scalar", [an, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

inline Tensor relu(const Tensor& a) {
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0f ? a.value()[i] : 0.0f;
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "relu");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("relu", [an, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i)
        if (an->value[i] > 0.0f) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

inline Tensor exp_t(const Tensor& a) {
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "exp");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("exp", [an, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i] * yn->value[i];
    });
  }
  return y;
}

// Gradient passes through inside [lo, hi] (inclusive), zero outside.
inline Tensor clamp(const Tensor& a, float lo, float hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  std::vector<float> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.value()[i]));
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output(a.shape(), std::move(out), track, "clamp");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("clamp", [an, yn, lo, hi] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i)
        if (an->value[i] >= lo && an->value[i] <= hi) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.value()) acc += static_cast<double>(v);
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output({1, 1}, {static_cast<float>(acc)}, track, "sum_all");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("sum_all", [an, yn] {
      const float g = yn->grad[0];
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return y;
}

inline Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
  double acc = 0.0;
  for (float v : a.value()) acc += static_cast<double>(v);
  const float inv = 1.0f / static_cast<float>(a.numel());
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output({1, 1}, {static_cast<float>(acc) * inv}, track, "mean_all");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("mean_all", [an, yn, inv] {
      const float g = yn->grad[0] * inv;
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return y;
}

// Row sums: [m,n] -> [m,1].
inline Tensor sum_cols(const Tensor& a) {
  detail::require_rank2(a, "sum_cols");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += a.value()[static_cast<std::size_t>(i) * n + j];
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output({m, 1}, std::move(out), track, "sum_cols");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("sum_cols", [an, yn, m, n] {
      for (int i = 0; i < m; ++i) {
        const float g = yn->grad[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) an->grad[static_cast<std::size_t>(i) * n + j] += g;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<float> out(static_cast<std::size_t>(m) * n, 0.0f);
  const float* pa = a.value().data();
  const float* pb = b.value().data();
  float* pc = out.data();
  // i-k-j order keeps the inner loop contiguous in both B and C.
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const float aik = pa[static_cast<std::size_t>(i) * k + kk];
      if (aik == 0.0f) continue;
      const float* brow = pb + static_cast<std::size_t>(kk) * n;
      float* crow = pc + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output({m, n}, std::move(out), track, "matmul");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("matmul", [an, bn, yn, m, k, n] {
      const float* gy = yn->grad.data();
      if (an->requires_grad) {
        // dA = dC * B^T
        float* ga = an->grad.data();
        const float* pb2 = bn->value.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const float* gyrow = gy + static_cast<std::size_t>(i) * n;
            const float* brow = pb2 + static_cast<std::size_t>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += static_cast<double>(gyrow[j]) * brow[j];
            ga[static_cast<std::size_t>(i) * k + kk] += static_cast<float>(acc);
          }
      }
      if (bn->requires_grad) {
        // dB = A^T * dC
        float* gb = bn->grad.data();
        const float* pa2 = an->value.data();
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < m; ++i) {
            const float aik = pa2[static_cast<std::size_t>(i) * k + kk];
            if (aik == 0.0f) continue;
            const float* gyrow = gy + static_cast<std::size_t>(i) * n;
            float* gbrow = gb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += aik * gyrow[j];
          }
      }
    });
  }
  return y;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
  const bool track = detail::want_grad({&a});
  Tensor y = detail::make_output({n, m}, std::move(out), track, "transpose");
  if (track) {
    auto an = a.node();
    auto yn = y.node();
    Tape::active().record("transpose", [an, yn, m, n] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<std::size_t>(i) * n + j] +=
              yn->grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return y;
}

// x [m,n] + bias [1,n] (or [n] as rank-1), broadcast over rows.
inline Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  detail::require_rank2(x, "add_rowwise");
  const int m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n)
    throw ShapeError("add_rowwise: bias length " + std::to_string(bias.numel()) +
                     " != columns " + std::to_string(n));
  std::vector<float> out(x.value().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          x.value()[static_cast<std::size_t>(i) * n + j] + bias.value()[static_cast<std::size_t>(j)];
  const bool track = detail::want_grad({&x, &bias});
  Tensor y = detail::make_output(x.shape(), std::move(out), track, "add_rowwise");
  if (track) {
    auto xn = x.node(), bn = bias.node(), yn = y.node();
    Tape::active().record("add_rowwise", [xn, bn, yn, m, n] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const float g = yn->grad[static_cast<std::size_t>(i) * n + j];
          if (xn->requires_grad) xn->grad[static_cast<std::size_t>(i) * n + j] += g;
          if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += g;
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax / attention / normalization

// Row-wise softmax with an optional per-column admission mask (shared by all
// rows). Masked columns get exactly zero weight, matching softmax(x + log m):
// exp(-inf - max) is exactly 0. A row with no admissible column has no
// normalizable distribution and raises DegenerateRowError.
inline Tensor softmax_masked(const Tensor& x, const std::vector<float>* key_mask) {
  detail::require_rank2(x, "softmax");
  const int m = x.dim(0), n = x.dim(1);
  if (n == 0) throw DegenerateRowError("softmax: empty row");
  if (key_mask && static_cast<int>(key_mask->size()) != n)
    throw ShapeError("softmax: mask length does not match columns");
  bool any_allowed = !key_mask;
  if (key_mask)
    for (float v : *key_mask) any_allowed = any_allowed || v > 0.0f;
  if (!any_allowed) throw DegenerateRowError("softmax: all columns masked");
  std::vector<float> out(x.value().size());
  for (int i = 0; i < m; ++i) {
    const float* row = x.value().data() + static_cast<std::size_t>(i) * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < n; ++j)
      if (!key_mask || (*key_mask)[static_cast<std::size_t>(j)] > 0.0f) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const bool allowed = !key_mask || (*key_mask)[static_cast<std::size_t>(j)] > 0.0f;
      const float e = allowed ? std::exp(row[j] - mx) : 0.0f;
      out[static_cast<std::size_t>(i) * n + j] = e;
      denom += e;
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= inv;
  }
  const bool track = detail::want_grad({&x});
  Tensor y = detail::make_output(x.shape(), std::move(out), track, "softmax");
  if (track) {
    auto xn = x.node();
    auto yn = y.node();
    Tape::active().record("softmax", [xn, yn, m, n] {
      for (int i = 0; i < m; ++i) {
        const float* yrow = yn->value.data() + static_cast<std::size_t>(i) * n;
        const float* grow = yn->grad.data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
        float* xg = xn->grad.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j)
          xg[j] += yrow[j] * (grow[j] - static_cast<float>(dot));
      }
    });
  }
  return y;
}

inline Tensor softmax(const Tensor& x) { return softmax_masked(x, nullptr); }

// Scaled dot-product attention for one (head, example):
//   softmax(q k^T / sqrt(d) + log mask) v
// key_mask marks admissible key positions (1) vs masked ones (0).
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<float>* key_mask = nullptr) {
  detail::require_rank2(q, "attention");
  detail::require_rank2(k, "attention");
  detail::require_rank2(v, "attention");
  if (q.dim(1) != k.dim(1)) throw ShapeError("attention: q/k feature widths differ");
  if (k.dim(0) != v.dim(0)) throw ShapeError("attention: k/v lengths differ");
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  Tensor probs = softmax_masked(scores, key_mask);
  return matmul(probs, v);
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         float eps = 1e-5f) {
  detail::require_rank2(x, "layer_norm");
  const int m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias length must equal feature width");
  std::vector<float> out(x.value().size());
  std::vector<float> xhat(x.value().size());
  std::vector<float> inv_sigma(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const float* row = x.value().data() + static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= n;
    const float isg = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_sigma[static_cast<std::size_t>(i)] = isg;
    for (int j = 0; j < n; ++j) {
      const float h = (row[j] - static_cast<float>(mean)) * isg;
      xhat[static_cast<std::size_t>(i) * n + j] = h;
      out[static_cast<std::size_t>(i) * n + j] =
          h * gain.value()[static_cast<std::size_t>(j)] + bias.value()[static_cast<std::size_t>(j)];
    }
  }
  const bool track = detail::want_grad({&x, &gain, &bias});
  Tensor y = detail::make_output(x.shape(), std::move(out), track, "layer_norm");
  if (track) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node();
    auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
    auto is = std::make_shared<std::vector<float>>(std::move(inv_sigma));
    Tape::active().record("layer_norm", [xn, gn, bn, yn, xh, is, m, n] {
      for (int i = 0; i < m; ++i) {
        const float* gy = yn->grad.data() + static_cast<std::size_t>(i) * n;
        const float* h = xh->data() + static_cast<std::size_t>(i) * n;
        if (gn->requires_grad || bn->requires_grad)
          for (int j = 0; j < n; ++j) {
            if (gn->requires_grad) gn->grad[static_cast<std::size_t>(j)] += gy[j] * h[j];
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += gy[j];
          }
        if (xn->requires_grad) {
          // dL/dxhat_j = gy_j * gain_j; standard layer-norm backward.
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dh = static_cast<double>(gy[j]) * gn->value[static_cast<std::size_t>(j)];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh /= n;
          mean_dh_h /= n;
          const float isg = (*is)[static_cast<std::size_t>(i)];
          float* xg = xn->grad.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double dh = static_cast<double>(gy[j]) * gn->value[static_cast<std::size_t>(j)];
            xg[j] += static_cast<float>(isg * (dh - mean_dh - h[j] * mean_dh_h));
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Gather / scatter, block ops

// Gather rows of an embedding table: ids index [0, V). Backward scatter-adds.
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  detail::require_rank2(table, "embedding_rows");
  const int V = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  std::vector<float> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= V)
      throw ContractError("embedding_rows: id " + std::to_string(id) + " outside table of " +
                          std::to_string(V));
    std::copy_n(table.value().data() + static_cast<std::size_t>(id) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);
  }
  const bool track = detail::want_grad({&table});
  Tensor y = detail::make_output({n, d}, std::move(out), track, "embedding_rows");
  if (track) {
    auto tn = table.node();
    auto yn = y.node();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    Tape::active().record("embedding_rows", [tn, yn, ids_copy, d] {
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        float* dst = tn->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
        const float* src = yn->grad.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

// z [B,d] -> [B*L,d]: each example's row repeated L times (conditioning
// broadcast over sequence positions). Backward sums each block.
inline Tensor broadcast_rows_blocks(const Tensor& z, int L) {
  detail::require_rank2(z, "broadcast_rows_blocks");
  if (L <= 0) throw ShapeError("broadcast_rows_blocks: L must be positive");
  const int B = z.dim(0), d = z.dim(1);
  std::vector<float> out(static_cast<std::size_t>(B) * L * d);
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l)
      std::copy_n(z.value().data() + static_cast<std::size_t>(b) * d, d,
                  out.data() + (static_cast<std::size_t>(b) * L + l) * d);
  const bool track = detail::want_grad({&z});
  Tensor y = detail::make_output({B * L, d}, std::move(out), track, "broadcast_rows_blocks");
  if (track) {
    auto zn = z.node();
    auto yn = y.node();
    Tape::active().record("broadcast_rows_blocks", [zn, yn, B, L, d] {
      for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) {
          const float* src = yn->grad.data() + (static_cast<std::size_t>(b) * L + l) * d;
          float* dst = zn->grad.data() + static_cast<std::size_t>(b) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
  }
  return y;
}

// x [B*L,d] -> [B,d]: per-example mean over the first lengths[b] rows of each
// block ("real" positions; padded rows are excluded).
inline Tensor mean_rows_blocks(const Tensor& x, int L, const std::vector<int>& lengths) {
  detail::require_rank2(x, "mean_rows_blocks");
  const int d = x.dim(1);
  const int B = static_cast<int>(lengths.size());
  if (x.dim(0) != B * L) throw ShapeError("mean_rows_blocks: rows != B*L");
  for (int len : lengths)
    if (len < 1 || len > L) throw ContractError("mean_rows_blocks: length outside [1, L]");
  std::vector<float> out(static_cast<std::size_t>(B) * d, 0.0f);
  for (int b = 0; b < B; ++b) {
    const int len = lengths[static_cast<std::size_t>(b)];
    for (int l = 0; l < len; ++l) {
      const float* src = x.value().data() + (static_cast<std::size_t>(b) * L + l) * d;
      float* dst = out.data() + static_cast<std::size_t>(b) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
    float* dst = out.data() + static_cast<std::size_t>(b) * d;
    for (int j = 0; j < d; ++j) dst[j] /= static_cast<float>(len);
  }
  const bool track = detail::want_grad({&x});
  Tensor y = detail::make_output({B, d}, std::move(out), track, "mean_rows_blocks");
  if (track) {
    auto xn = x.node();
    auto yn = y.node();
    auto lens = std::make_shared<std::vector<int>>(lengths);
    Tape::active().record("mean_rows_blocks", [xn, yn, lens, L, d] {
      for (std::size_t b = 0; b < lens->size(); ++b) {
        const int len = (*lens)[b];
        const float inv = 1.0f / static_cast<float>(len);
        const float* src = yn->grad.data() + b * d;
        for (int l = 0; l < len; ++l) {
          float* dst = xn->grad.data() + (b * static_cast<std::size_t>(L) + l) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j] * inv;
        }
      }
    });
  }
  return y;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_cols: row counts differ");
  const int m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m) * (p + q));
  for (int i = 0; i < m; ++i) {
    std::copy_n(a.value().data() + static_cast<std::size_t>(i) * p, p,
                out.data() + static_cast<std::size_t>(i) * (p + q));
    std::copy_n(b.value().data() + static_cast<std::size_t>(i) * q, q,
                out.data() + static_cast<std::size_t>(i) * (p + q) + p);
  }
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output({m, p + q}, std::move(out), track, "concat_cols");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("concat_cols", [an, bn, yn, m, p, q] {
      for (int i = 0; i < m; ++i) {
        const float* g = yn->grad.data() + static_cast<std::size_t>(i) * (p + q);
        if (an->requires_grad)
          for (int j = 0; j < p; ++j) an->grad[static_cast<std::size_t>(i) * p + j] += g[j];
        if (bn->requires_grad)
          for (int j = 0; j < q; ++j) bn->grad[static_cast<std::size_t>(i) * q + j] += g[p + j];
      }
    });
  }
  return y;
}

// Rows [r0, r1) of x as a new tensor (used to split per-example blocks).
inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  detail::require_rank2(x, "slice_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (r0 < 0 || r1 > m || r0 >= r1) throw ShapeError("slice_rows: bad range");
  std::vector<float> out(static_cast<std::size_t>(r1 - r0) * n);
  std::copy_n(x.value().data() + static_cast<std::size_t>(r0) * n, out.size(), out.data());
  const bool track = detail::want_grad({&x});
  Tensor y = detail::make_output({r1 - r0, n}, std::move(out), track, "slice_rows");
  if (track) {
    auto xn = x.node();
    auto yn = y.node();
    Tape::active().record("slice_rows", [xn, yn, r0, n] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i)
        xn->grad[static_cast<std::size_t>(r0) * n + i] += yn->grad[i];
    });
  }
  return y;
}

// Columns [c0, c1) of x as a new tensor (used to split attention heads).
inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  detail::require_rank2(x, "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) throw ShapeError("slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<float> out(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::copy_n(x.value().data() + static_cast<std::size_t>(i) * n + c0, w,
                out.data() + static_cast<std::size_t>(i) * w);
  const bool track = detail::want_grad({&x});
  Tensor y = detail::make_output({m, w}, std::move(out), track, "slice_cols");
  if (track) {
    auto xn = x.node();
    auto yn = y.node();
    Tape::active().record("slice_cols", [xn, yn, m, n, c0, w] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          xn->grad[static_cast<std::size_t>(i) * n + c0 + j] +=
              yn->grad[static_cast<std::size_t>(i) * w + j];
    });
  }
  return y;
}

// Stack row blocks vertically (inverse of slice_rows over a partition).
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int n = parts.front().dim(1);
  int m = 0;
  for (const Tensor& t : parts) {
    detail::require_rank2(t, "concat_rows");
    if (t.dim(1) != n) throw ShapeError("concat_rows: column widths differ");
    m += t.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  bool track = false;
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.value().begin(), t.value().end());
    track = track || (grad_enabled() && t.requires_grad());
  }
  Tensor y = detail::make_output({m, n}, std::move(out), track, "concat_rows");
  if (track) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& t : parts) nodes.push_back(t.node());
    auto yn = y.node();
    Tape::active().record("concat_rows", [nodes, yn] {
      std::size_t off = 0;
      for (const auto& nd : nodes) {
        if (nd->requires_grad)
          for (std::size_t i = 0; i < nd->value.size(); ++i) nd->grad[i] += yn->grad[off + i];
        off += nd->value.size();
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Losses and similarity

// Mean negative log-likelihood over the rows listed in `rows` (all rows when
// empty). Targets are class ids per row. Stable log-softmax under the hood.
inline Tensor nll_from_logits(const Tensor& logits, const std::vector<int>& targets,
                              const std::vector<int>& rows = {}) {
  detail::require_rank2(logits, "nll_from_logits");
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("nll_from_logits: one target per row required");
  std::vector<int> use = rows;
  if (use.empty()) {
    use.resize(static_cast<std::size_t>(m));
    std::iota(use.begin(), use.end(), 0);
  }
  for (int r : use)
    if (r < 0 || r >= m) throw ContractError("nll_from_logits: row index out of range");
  const float inv_count = 1.0f / static_cast<float>(use.size());
  // Cache per-used-row log-sum-exp for the backward pass.
  auto lse = std::make_shared<std::vector<float>>();
  lse->reserve(use.size());
  double acc = 0.0;
  for (int r : use) {
    const float* row = logits.value().data() + static_cast<std::size_t>(r) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const float l = mx + static_cast<float>(std::log(denom));
    lse->push_back(l);
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= n) throw ContractError("nll_from_logits: target class out of range");
    acc += static_cast<double>(l) - row[t];
  }
  const bool track = detail::want_grad({&logits});
  Tensor y = detail::make_output({1, 1}, {static_cast<float>(acc) * inv_count}, track,
                                 "nll_from_logits");
  if (track) {
    auto ln = logits.node();
    auto yn = y.node();
    auto use_copy = std::make_shared<std::vector<int>>(use);
    auto tgt = std::make_shared<std::vector<int>>(targets);
    Tape::active().record("nll_from_logits", [ln, yn, use_copy, tgt, lse, n, inv_count] {
      const float g = yn->grad[0] * inv_count;
      for (std::size_t ui = 0; ui < use_copy->size(); ++ui) {
        const int r = (*use_copy)[ui];
        const float* row = ln->value.data() + static_cast<std::size_t>(r) * n;
        float* grow = ln->grad.data() + static_cast<std::size_t>(r) * n;
        const float l = (*lse)[ui];
        for (int j = 0; j < n; ++j) grow[j] += g * std::exp(row[j] - l);
        grow[(*tgt)[static_cast<std::size_t>(r)]] -= g;
      }
    });
  }
  return y;
}

// Per-row cosine similarity between a and b: [m,n] x [m,n] -> [m,1].
// A zero row on either side has no direction; that is a numeric error.
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "cosine_rows");
  detail::require_rank2(a, "cosine_rows");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m));
  auto na = std::make_shared<std::vector<float>>(static_cast<std::size_t>(m));
  auto nb = std::make_shared<std::vector<float>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const float* ra = a.value().data() + static_cast<std::size_t>(i) * n;
    const float* rb = b.value().data() + static_cast<std::size_t>(i) * n;
    double dot = 0.0, qa = 0.0, qb = 0.0;
    for (int j = 0; j < n; ++j) {
      dot += static_cast<double>(ra[j]) * rb[j];
      qa += static_cast<double>(ra[j]) * ra[j];
      qb += static_cast<double>(rb[j]) * rb[j];
    }
    const double la = std::sqrt(qa), lb = std::sqrt(qb);
    if (la < 1e-12 || lb < 1e-12)
      throw NumericError("cosine_rows: zero-magnitude row has no direction");
    (*na)[static_cast<std::size_t>(i)] = static_cast<float>(la);
    (*nb)[static_cast<std::size_t>(i)] = static_cast<float>(lb);
    out[static_cast<std::size_t>(i)] = static_cast<float>(dot / (la * lb));
  }
  const bool track = detail::want_grad({&a, &b});
  Tensor y = detail::make_output({m, 1}, std::move(out), track, "cosine_rows");
  if (track) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape::active().record("cosine_rows", [an, bn, yn, na, nb, m, n] {
      for (int i = 0; i < m; ++i) {
        const float g = yn->grad[static_cast<std::size_t>(i)];
        if (g == 0.0f) continue;
        const float c = yn->value[static_cast<std::size_t>(i)];
        const float la = (*na)[static_cast<std::size_t>(i)];
        const float lb = (*nb)[static_cast<std::size_t>(i)];
        const float* ra = an->value.data() + static_cast<std::size_t>(i) * n;
        const float* rb = bn->value.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          // d cos / da_j = b_j/(|a||b|) - cos * a_j/|a|^2
          if (an->requires_grad)
            an->grad[static_cast<std::size_t>(i) * n + j] +=
                g * (rb[j] / (la * lb) - c * ra[j] / (la * la));
          if (bn->requires_grad)
            bn->grad[static_cast<std::size_t>(i) * n + j] +=
                g * (ra[j] / (la * lb) - c * rb[j] / (lb * lb));
        }
      }
    });
  }
  return y;
}

// Inverted dropout: train mode samples a keep mask and scales by 1/(1-rate);
// eval mode is the identity. The mask is drawn from `rng`, so a given rng
// state fully determines the op.
inline Tensor dropout(const Tensor& x, float rate, Rng& rng, bool training) {
  if (rate < 0.0f || rate >= 1.0f) throw ContractError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0f) return x;
  const float inv_keep = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(x.value().size());
  std::vector<float> out(x.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float keep = rng.uniform() >= rate ? inv_keep : 0.0f;
    (*mask)[i] = keep;
    out[i] = x.value()[i] * keep;
  }
  const bool track = detail::want_grad({&x});
  Tensor y = detail::make_output(x.shape(), std::move(out), track, "dropout");
  if (track) {
    auto xn = x.node();
    auto yn = y.node();
    Tape::active().record("dropout", [xn, yn, mask] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * (*mask)[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sinusoidal encodings

// Interleaved sin/cos positional table, base 10000:
//   PE[p, 2i]   = sin(p / 10000^(2i/d))
//   PE[p, 2i+1] = cos(p / 10000^(2i/d))
inline Tensor positional_encoding(int L, int d) {
  if (L <= 0 || d <= 0) throw ShapeError("positional_encoding: dimensions must be positive");
  std::vector<float> out(static_cast<std::size_t>(L) * d);
  for (int p = 0; p < L; ++p)
    for (int i = 0; i < d; ++i) {
      const int pair = i / 2;
      const double rate = std::pow(10000.0, -2.0 * pair / d);
      const double angle = p * rate;
      out[static_cast<std::size_t>(p) * d + i] =
          static_cast<float>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return Tensor::constant({L, d}, std::move(out));
}

// Timestep encoding: the positional formula evaluated at position t, as one
// row. timestep_encoding(t, d) equals row t of positional_encoding(L, d).
inline Tensor timestep_encoding(int t, int d) {
  if (t < 0) throw ContractError("timestep_encoding: t must be non-negative");
  if (d <= 0) throw ShapeError("timestep_encoding: d must be positive");
  std::vector<float> out(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const int pair = i / 2;
    const double rate = std::pow(10000.0, -2.0 * pair / d);
    const double angle = t * rate;
    out[static_cast<std::size_t>(i)] =
        static_cast<float>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
  }
  return Tensor::constant({1, d}, std::move(out));
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam with bias correction. State slots are keyed by position in the
// parameter list, which must stay stable across steps.
struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  void step(std::vector<Tensor>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        m_[p].assign(params[p].value().size(), 0.0f);
        v_[p].assign(params[p].value().size(), 0.0f);
      }
    }
    if (m_.size() != params.size())
      throw ContractError("Adam::step: parameter list size changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& w = params[p];
      if (!w.requires_grad())
        throw ContractError("Adam::step: parameter '" + w.name() + "' does not require grad");
      auto& val = w.value();
      auto& g = w.grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw NumericError("Adam::step: non-finite gradient in parameter '" + w.name() +
                             "' at flat index " + std::to_string(i));
        m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0f - cfg_.beta1) * g[i];
        v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0f - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[p][i] / bc1;
        const double vhat = v_[p][i] / bc2;
        val[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        if (!std::isfinite(val[i]))
          throw NumericError("Adam::step: non-finite value in parameter '" + w.name() + "'");
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

inline void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

inline void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace todi
