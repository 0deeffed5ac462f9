#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace coopsim {

// Reverse-mode autodiff on dense float64 tensors. A Tape records one forward
// computation; backward() walks it in reverse. Tapes and their tensors belong
// to a single thread; independent tapes may run concurrently.

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;     // persistent, accumulated across backward calls
  std::vector<double> scratch;  // per-backward-pass buffer
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data length " +
                                  std::to_string(data.size()));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  size_t numel() const { return impl_->data.size(); }
  size_t rank() const { return impl_->shape.size(); }
  size_t dim(size_t i) const { return impl_->shape[i]; }
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double value() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::value: tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
  }

  const std::vector<double>& grad() const {
    ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
  void ensure_grad() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> tensors;  // output first, then inputs
    std::function<void()> backward;                    // reads/writes scratch
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node) { nodes_.push_back(std::move(node)); }
  size_t size() const { return nodes_.size(); }

  // Propagates d(loss)/d(t) into t.grad for every tensor touched by this tape.
  // Gradients accumulate additively across calls.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> touched;
    auto touch = [&](TensorImpl* t) {
      if (seen.insert(t).second) touched.push_back(t);
    };
    touch(loss.impl().get());
    for (auto& n : nodes_)
      for (auto& t : n.tensors) touch(t.get());
    for (TensorImpl* t : touched) t->scratch.assign(t->data.size(), 0.0);
    loss.impl()->scratch[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    for (TensorImpl* t : touched) {
      if (!t->requires_grad) continue;
      if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
      for (size_t i = 0; i < t->data.size(); ++i) t->grad[i] += t->scratch[i];
    }
  }

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

 private:
  std::vector<Node> nodes_;
};

// RAII scope making a tape the recording target for this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape) : prev_(Tape::current()) { Tape::current() = tape; }
  ~TapeScope() { Tape::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline void op_shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if ((*t).requires_grad()) return true;
  return false;
}

// Records a node if a tape is active and some input requires grad; marks the
// output as requiring grad in that case.
inline void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                   std::function<void()> backward) {
  Tape* tape = Tape::current();
  if (!tape || !any_requires_grad(inputs)) return;
  out.impl()->requires_grad = true;
  Tape::Node node;
  node.tensors.push_back(out.impl());
  for (const Tensor* t : inputs) node.tensors.push_back((*t).impl());
  node.backward = std::move(backward);
  tape->record(std::move(node));
}

}  // namespace detail

// ---- forward primitives -----------------------------------------------------

// matmul: (m,k) x (k,n) -> (m,n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    detail::op_shape_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t l = 0; l < k; ++l) {
      double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* pbr = pb + l * n;
      double* por = po + i * n;
      for (size_t j = 0; j < n; ++j) por[j] += av * pbr[j];
    }
  detail::record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
    const double* go = oi->scratch.data();
    const double* pa = ai->data.data();
    const double* pb = bi->data.data();
    double* ga = ai->scratch.data();
    double* gb = bi->scratch.data();
    // dA += dY * B^T ; dB += A^T * dY
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) {
        double g = go[i * n + j];
        if (g == 0.0) continue;
        for (size_t l = 0; l < k; ++l) {
          ga[i * k + l] += g * pb[l * n + j];
          gb[l * n + j] += pa[i * k + l] * g;
        }
      }
  });
  return out;
}

namespace detail {

enum class EwKind { Add, Sub, Mul };

// Elementwise with scalar-with-tensor broadcast only; any other shape
// mismatch is a contract violation.
inline Tensor elementwise(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1 && a.rank() == 0;
  const bool b_scalar = b.numel() == 1 && b.rank() == 0;
  if (!(a.shape() == b.shape() || a_scalar || b_scalar))
    op_shape_error(name, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Tensor& big = a_scalar ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  const size_t n = out.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) {
    double av = a_scalar ? pa[0] : pa[i];
    double bv = b_scalar ? pb[0] : pb[i];
    po[i] = kind == EwKind::Add ? av + bv : kind == EwKind::Sub ? av - bv : av * bv;
  }
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), kind, a_scalar, b_scalar, n] {
    const double* go = oi->scratch.data();
    double* ga = ai->scratch.data();
    double* gb = bi->scratch.data();
    const double* pa = ai->data.data();
    const double* pb = bi->data.data();
    for (size_t i = 0; i < n; ++i) {
      double g = go[i];
      double da, db;
      switch (kind) {
        case EwKind::Add: da = g; db = g; break;
        case EwKind::Sub: da = g; db = -g; break;
        default: {
          double av = a_scalar ? pa[0] : pa[i];
          double bv = b_scalar ? pb[0] : pb[i];
          da = g * bv;
          db = g * av;
        }
      }
      ga[a_scalar ? 0 : i] += da;
      gb[b_scalar ? 0 : i] += db;
    }
  });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::elementwise("add", detail::EwKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::elementwise("sub", detail::EwKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::elementwise("mul", detail::EwKind::Mul, a, b); }

// add_bias: (n,d) + (d,) broadcast over rows. Distinct named op, keeping the
// no-general-broadcast rule intact.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0))
    detail::op_shape_error("add_bias", "expected (n,d)+(d,), got " + shape_str(x.shape()) + " and " + shape_str(bias.shape()));
  const size_t n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] + bias.data()[j];
  detail::record(out, {&x, &bias}, [xi = x.impl(), bi = bias.impl(), oi = out.impl(), n, d] {
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) {
        double g = oi->scratch[i * d + j];
        xi->scratch[i * d + j] += g;
        bi->scratch[j] += g;
      }
  });
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * c;
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), c] {
    for (size_t i = 0; i < xi->data.size(); ++i) xi->scratch[i] += oi->scratch[i] * c;
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    for (size_t i = 0; i < xi->data.size(); ++i)
      if (xi->data[i] > 0.0) xi->scratch[i] += oi->scratch[i];
  });
  return out;
}

// abs with subgradient 0 at exactly 0.
inline Tensor abs_val(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::abs(x.data()[i]);
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    for (size_t i = 0; i < xi->data.size(); ++i) {
      double s = xi->data[i] > 0.0 ? 1.0 : xi->data[i] < 0.0 ? -1.0 : 0.0;
      xi->scratch[i] += oi->scratch[i] * s;
    }
  });
  return out;
}

// clip to [lo, hi]; gradient 1 inside the closed interval, 0 outside.
inline Tensor clip(const Tensor& x, double lo, double hi) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), lo, hi] {
    for (size_t i = 0; i < xi->data.size(); ++i)
      if (xi->data[i] >= lo && xi->data[i] <= hi) xi->scratch[i] += oi->scratch[i];
  });
  return out;
}

// softmax over the last axis of a rank-1 or rank-2 tensor.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2)
    detail::op_shape_error("softmax", "expected rank 1 or 2, got " + shape_str(x.shape()));
  const size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
  Tensor out = Tensor::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* px = x.data().data() + r * cols;
    double* po = out.data().data() + r * cols;
    double mx = px[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, px[j]);
    double sum = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      po[j] = std::exp(px[j] - mx);
      sum += po[j];
    }
    for (size_t j = 0; j < cols; ++j) po[j] /= sum;
  }
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), rows, cols] {
    for (size_t r = 0; r < rows; ++r) {
      const double* y = oi->data.data() + r * cols;
      const double* gy = oi->scratch.data() + r * cols;
      double* gx = xi->scratch.data() + r * cols;
      double dot = 0.0;
      for (size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (size_t j = 0; j < cols; ++j) gx[j] += (gy[j] - dot) * y[j];
    }
  });
  return out;
}

// softmax over blocks of `block` consecutive rows, per column: the
// (n,k,d)-view normalization across the middle axis, stored as (n*k, d).
inline Tensor softmax_blocked(const Tensor& x, size_t block) {
  if (x.rank() != 2 || block == 0 || x.dim(0) % block != 0)
    detail::op_shape_error("softmax_blocked", "rows of " + shape_str(x.shape()) + " not divisible by block " +
                                                  std::to_string(block));
  const size_t groups = x.dim(0) / block, d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (size_t g = 0; g < groups; ++g)
    for (size_t j = 0; j < d; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t b = 0; b < block; ++b) mx = std::max(mx, x.data()[(g * block + b) * d + j]);
      double sum = 0.0;
      for (size_t b = 0; b < block; ++b) {
        double e = std::exp(x.data()[(g * block + b) * d + j] - mx);
        out.data()[(g * block + b) * d + j] = e;
        sum += e;
      }
      for (size_t b = 0; b < block; ++b) out.data()[(g * block + b) * d + j] /= sum;
    }
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), groups, block, d] {
    for (size_t g = 0; g < groups; ++g)
      for (size_t j = 0; j < d; ++j) {
        double dot = 0.0;
        for (size_t b = 0; b < block; ++b) {
          size_t idx = (g * block + b) * d + j;
          dot += oi->scratch[idx] * oi->data[idx];
        }
        for (size_t b = 0; b < block; ++b) {
          size_t idx = (g * block + b) * d + j;
          xi->scratch[idx] += (oi->scratch[idx] - dot) * oi->data[idx];
        }
      }
  });
  return out;
}

// gather_rows: out[i,:] = x[idx[i],:]; backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<size_t>& idx) {
  if (x.rank() != 2) detail::op_shape_error("gather_rows", "expected rank 2, got " + shape_str(x.shape()));
  const size_t d = x.dim(1);
  for (size_t i : idx)
    if (i >= x.dim(0)) detail::op_shape_error("gather_rows", "index " + std::to_string(i) + " out of range");
  Tensor out = Tensor::zeros({idx.size(), d});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data().data() + idx[i] * d, d, out.data().data() + i * d);
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), idx, d] {
    for (size_t i = 0; i < idx.size(); ++i)
      for (size_t j = 0; j < d; ++j) xi->scratch[idx[i] * d + j] += oi->scratch[i * d + j];
  });
  return out;
}

// Vertical concatenation of rank-2 tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) detail::op_shape_error("concat_rows", "no inputs");
  const size_t d = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d)
      detail::op_shape_error("concat_rows", "ragged input " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  Tensor out = Tensor::zeros({rows, d});
  size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.numel();
  }
  Tape* tape = Tape::current();
  bool needs = false;
  for (const Tensor& p : parts) needs |= p.requires_grad();
  if (tape && needs) {
    out.impl()->requires_grad = true;
    Tape::Node node;
    node.tensors.push_back(out.impl());
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const Tensor& p : parts) {
      node.tensors.push_back(p.impl());
      impls.push_back(p.impl());
    }
    auto oi = out.impl();
    node.backward = [oi, impls] {
      size_t off = 0;
      for (auto& pi : impls) {
        for (size_t i = 0; i < pi->data.size(); ++i) pi->scratch[i] += oi->scratch[off + i];
        off += pi->data.size();
      }
    };
    tape->record(std::move(node));
  }
  return out;
}

// Concatenation of rank-1 tensors.
inline Tensor concat_vec(const std::vector<Tensor>& parts) {
  size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 1) detail::op_shape_error("concat_vec", "expected rank 1, got " + shape_str(p.shape()));
    n += p.dim(0);
  }
  Tensor out = Tensor::zeros({n});
  size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.numel();
  }
  Tape* tape = Tape::current();
  bool needs = false;
  for (const Tensor& p : parts) needs |= p.requires_grad();
  if (tape && needs) {
    out.impl()->requires_grad = true;
    Tape::Node node;
    node.tensors.push_back(out.impl());
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const Tensor& p : parts) {
      node.tensors.push_back(p.impl());
      impls.push_back(p.impl());
    }
    auto oi = out.impl();
    node.backward = [oi, impls] {
      size_t off = 0;
      for (auto& pi : impls) {
        for (size_t i = 0; i < pi->data.size(); ++i) pi->scratch[i] += oi->scratch[off + i];
        off += pi->data.size();
      }
    };
    tape->record(std::move(node));
  }
  return out;
}

// reshape without copy semantics (data copied; gradient passes through).
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    detail::op_shape_error("reshape", "numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), x.data());
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    for (size_t i = 0; i < xi->data.size(); ++i) xi->scratch[i] += oi->scratch[i];
  });
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    double g = oi->scratch[0];
    for (size_t i = 0; i < xi->data.size(); ++i) xi->scratch[i] += g;
  });
  return out;
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) detail::op_shape_error("mean", "empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s / static_cast<double>(x.numel()));
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    double g = oi->scratch[0] / static_cast<double>(xi->data.size());
    for (size_t i = 0; i < xi->data.size(); ++i) xi->scratch[i] += g;
  });
  return out;
}

// max over explicit row groups: out[g,:] = elementwise max over x[i,:] for i
// in groups[g]. Ties route gradient to the first (lowest-index) argmax.
inline Tensor max_rows_grouped(const Tensor& x, const std::vector<std::vector<size_t>>& groups) {
  if (x.rank() != 2) detail::op_shape_error("max_rows_grouped", "expected rank 2, got " + shape_str(x.shape()));
  const size_t d = x.dim(1);
  Tensor out = Tensor::zeros({groups.size(), d});
  auto argmax = std::make_shared<std::vector<size_t>>(groups.size() * d);
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) detail::op_shape_error("max_rows_grouped", "empty group " + std::to_string(g));
    for (size_t j = 0; j < d; ++j) {
      size_t best = groups[g][0];
      double bv = x.data()[best * d + j];
      for (size_t m = 1; m < groups[g].size(); ++m) {
        size_t i = groups[g][m];
        if (x.data()[i * d + j] > bv) {
          bv = x.data()[i * d + j];
          best = i;
        }
      }
      out.data()[g * d + j] = bv;
      (*argmax)[g * d + j] = best;
    }
  }
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), argmax, d, ng = groups.size()] {
    for (size_t g = 0; g < ng; ++g)
      for (size_t j = 0; j < d; ++j)
        xi->scratch[(*argmax)[g * d + j] * d + j] += oi->scratch[g * d + j];
  });
  return out;
}

// Global max over rows: (n,d) -> (d,).
inline Tensor max_over_rows(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0)
    detail::op_shape_error("max_over_rows", "expected non-empty rank 2, got " + shape_str(x.shape()));
  std::vector<size_t> all(x.dim(0));
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  Tensor m = max_rows_grouped(x, {all});
  return reshape(m, {x.dim(1)});
}

// Sum over blocks of `block` consecutive rows: (n*block, d) -> (n, d).
inline Tensor sum_rows_blocked(const Tensor& x, size_t block) {
  if (x.rank() != 2 || block == 0 || x.dim(0) % block != 0)
    detail::op_shape_error("sum_rows_blocked", "rows of " + shape_str(x.shape()) + " not divisible by block " +
                                                   std::to_string(block));
  const size_t n = x.dim(0) / block, d = x.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (size_t i = 0; i < n; ++i)
    for (size_t b = 0; b < block; ++b)
      for (size_t j = 0; j < d; ++j) out.data()[i * d + j] += x.data()[(i * block + b) * d + j];
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), n, block, d] {
    for (size_t i = 0; i < n; ++i)
      for (size_t b = 0; b < block; ++b)
        for (size_t j = 0; j < d; ++j) xi->scratch[(i * block + b) * d + j] += oi->scratch[i * d + j];
  });
  return out;
}

// ---- verification harness ---------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// max(1e-12, |analytic| + |numeric|) for a scalar-valued f.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  x.impl()->requires_grad = true;
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(&tape);
    Tensor y = f(x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(y);
  }
  std::vector<double> analytic = x.grad();
  TapeScope no_tape(nullptr);  // numeric evals must not record
  double max_err = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = x.data()[i];
    x.data()[i] = orig + eps;
    double up = f(x).value();
    x.data()[i] = orig - eps;
    double dn = f(x).value();
    x.data()[i] = orig;
    double numeric = (up - dn) / (2.0 * eps);
    double denom = std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace coopsim
