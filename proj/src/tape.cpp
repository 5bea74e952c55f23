#include "divgen/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace divgen {

namespace {

void ensure_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw std::domain_error(std::string(op) + " produced non-finite values");
  }
}

void check_same_tape(Node a, Node b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument("operands must live on the same tape");
  }
}

}  // namespace

const Tensor& Node::value() const { return tape->value_of(id); }
const Tensor& Node::grad() const { return tape->grad_of(id); }

const Tensor& Tape::value_of(int id) const { return val(id); }
const Tensor& Tape::grad_of(int id) const {
  const Rec& r = recs_[static_cast<std::size_t>(id)];
  return r.ext_grad ? *r.ext_grad : r.grad;
}

Tape::Rec& Tape::push(Op op, int a, int b) {
  if (count_ == recs_.size()) recs_.emplace_back();
  Rec& r = recs_[count_];
  ++count_;
  r.op = op;
  r.a = a;
  r.b = b;
  r.aux = 0;
  r.ext_value = nullptr;
  r.ext_grad = nullptr;
  return r;
}

Node Tape::input(Tensor value) {
  Rec& r = push(Op::kInput, -1, -1);
  r.value = std::move(value);
  r.grad.reset_zero(r.value.shape());
  return Node{this, static_cast<int>(count_) - 1};
}

Node Tape::param(Parameter& p) {
  if (!p.value.same_shape(p.grad)) {
    throw std::invalid_argument("parameter gradient shape mismatch");
  }
  Rec& r = push(Op::kParam, -1, -1);
  r.ext_value = &p.value;
  r.ext_grad = &p.grad;
  return Node{this, static_cast<int>(count_) - 1};
}

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::kNone;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  throw std::invalid_argument(std::string(op) +
                              ": shapes are neither equal nor scalar-broadcast");
}

}  // namespace

Node add(Node na, Node nb) {
  check_same_tape(na, nb);
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  const Tensor& b = t.val(nb.id);
  const Broadcast bc = broadcast_kind(a, b, "add");
  Tape::Rec& r = t.push(Tape::Op::kAdd, na.id, nb.id);
  const Tensor& big = bc == Broadcast::kLeftScalar ? b : a;
  r.value.reset_zero(big.shape());
  const std::size_t n = big.numel();
  double* out = r.value.data();
  if (bc == Broadcast::kNone) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  } else if (bc == Broadcast::kLeftScalar) {
    const double s = a[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = s + b[i];
  } else {
    const double s = b[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
  }
  ensure_finite(r.value, "add");
  r.grad.reset_zero(r.value.shape());
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node sub(Node na, Node nb) {
  check_same_tape(na, nb);
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  const Tensor& b = t.val(nb.id);
  const Broadcast bc = broadcast_kind(a, b, "sub");
  Tape::Rec& r = t.push(Tape::Op::kSub, na.id, nb.id);
  const Tensor& big = bc == Broadcast::kLeftScalar ? b : a;
  r.value.reset_zero(big.shape());
  const std::size_t n = big.numel();
  double* out = r.value.data();
  if (bc == Broadcast::kNone) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  } else if (bc == Broadcast::kLeftScalar) {
    const double s = a[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = s - b[i];
  } else {
    const double s = b[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - s;
  }
  ensure_finite(r.value, "sub");
  r.grad.reset_zero(r.value.shape());
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node mul(Node na, Node nb) {
  check_same_tape(na, nb);
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  const Tensor& b = t.val(nb.id);
  const Broadcast bc = broadcast_kind(a, b, "mul");
  Tape::Rec& r = t.push(Tape::Op::kMul, na.id, nb.id);
  const Tensor& big = bc == Broadcast::kLeftScalar ? b : a;
  r.value.reset_zero(big.shape());
  const std::size_t n = big.numel();
  double* out = r.value.data();
  if (bc == Broadcast::kNone) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  } else if (bc == Broadcast::kLeftScalar) {
    const double s = a[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = s * b[i];
  } else {
    const double s = b[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  }
  ensure_finite(r.value, "mul");
  r.grad.reset_zero(r.value.shape());
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node matmul(Node na, Node nb) {
  check_same_tape(na, nb);
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  const Tensor& b = t.val(nb.id);
  if (a.rank() != 2) {
    throw std::invalid_argument("matmul: left operand must be rank 2");
  }
  const std::size_t m = a.rows(), k = a.cols();
  if (b.rank() == 2) {
    if (b.rows() != k) throw std::invalid_argument("matmul: inner dims differ");
    const std::size_t n = b.cols();
    Tape::Rec& r = t.push(Tape::Op::kMatmul, na.id, nb.id);
    r.value.reset_zero({m, n});
    double* out = r.value.data();
    const double* ap = a.data();
    const double* bp = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = out + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = ap[i * k + kk];
        const double* brow = bp + kk * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    ensure_finite(r.value, "matmul");
    r.grad.reset_zero(r.value.shape());
    return Node{&t, static_cast<int>(t.count_) - 1};
  }
  if (b.rank() == 1) {
    // Vector treated as a column; result is rank 1.
    if (b.numel() != k) throw std::invalid_argument("matmul: inner dims differ");
    Tape::Rec& r = t.push(Tape::Op::kMatmul, na.id, nb.id);
    r.value.reset_zero({m});
    double* out = r.value.data();
    const double* ap = a.data();
    const double* x = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = ap + i * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * x[kk];
      out[i] = acc;
    }
    ensure_finite(r.value, "matmul");
    r.grad.reset_zero(r.value.shape());
    return Node{&t, static_cast<int>(t.count_) - 1};
  }
  throw std::invalid_argument("matmul: right operand must be rank 1 or 2");
}

template <typename F>
Node Tape::unary(Node na, Op op, const char* name, F f) {
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  Rec& r = t.push(op, na.id, -1);
  r.value.reset_zero(a.shape());
  const std::size_t n = a.numel();
  double* out = r.value.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i]);
  ensure_finite(r.value, name);
  r.grad.reset_zero(r.value.shape());
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node tanh(Node a) {
  return Tape::unary(a, Tape::Op::kTanh, "tanh", [](double x) { return std::tanh(x); });
}

Node sigmoid(Node a) {
  return Tape::unary(a, Tape::Op::kSigmoid, "sigmoid", [](double x) {
    return 1.0 / (1.0 + std::exp(-x));
  });
}

Node exp(Node a) {
  return Tape::unary(a, Tape::Op::kExp, "exp", [](double x) { return std::exp(x); });
}

Node log(Node na) {
  const Tensor& a = na.tape->val(na.id);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(a[i] > 0.0)) throw std::domain_error("log: operand must be positive");
  }
  return Tape::unary(na, Tape::Op::kLog, "log", [](double x) { return std::log(x); });
}

Node square(Node a) {
  return Tape::unary(a, Tape::Op::kSquare, "square", [](double x) { return x * x; });
}

Node sum(Node na) {
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  Tape::Rec& r = t.push(Tape::Op::kSum, na.id, -1);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
  r.value.reset_zero({1});
  r.value[0] = acc;
  ensure_finite(r.value, "sum");
  r.grad.reset_zero({1});
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node row(Node na, std::size_t index) {
  Tape& t = *na.tape;
  const Tensor& a = t.val(na.id);
  if (a.rank() != 2) throw std::invalid_argument("row: operand must be rank 2");
  if (index >= a.rows()) throw std::out_of_range("row: index out of range");
  const std::size_t n = a.cols();
  Tape::Rec& r = t.push(Tape::Op::kRow, na.id, -1);
  r.aux = index;
  r.value.reset_zero({n});
  const double* src = a.data() + index * n;
  double* out = r.value.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = src[i];
  ensure_finite(r.value, "row");
  r.grad.reset_zero(r.value.shape());
  return Node{&t, static_cast<int>(t.count_) - 1};
}

Node softmax_cross_entropy(Node logits, std::size_t target) {
  Tape& t = *logits.tape;
  const Tensor& a = t.val(logits.id);
  if (a.rank() != 1) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be rank 1");
  }
  const std::size_t v = a.numel();
  if (target >= v) {
    throw std::out_of_range("softmax_cross_entropy: target out of range");
  }
  Tape::Rec& r = t.push(Tape::Op::kSoftmaxCE, logits.id, -1);
  r.aux = target;
  double maxv = a[0];
  for (std::size_t i = 1; i < v; ++i) maxv = std::max(maxv, a[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < v; ++i) denom += std::exp(a[i] - maxv);
  const double lse = maxv + std::log(denom);
  r.scratch.resize(v);
  for (std::size_t i = 0; i < v; ++i) r.scratch[i] = std::exp(a[i] - lse);
  r.value.reset_zero({1});
  r.value[0] = lse - a[target];
  ensure_finite(r.value, "softmax_cross_entropy");
  r.grad.reset_zero({1});
  return Node{&t, static_cast<int>(t.count_) - 1};
}

void Tape::backprop_rec(int id) {
  Rec& r = recs_[static_cast<std::size_t>(id)];
  const Tensor& g = r.ext_grad ? *r.ext_grad : r.grad;
  switch (r.op) {
    case Op::kInput:
    case Op::kParam:
      return;
    case Op::kAdd: {
      Tensor& ga = grd(r.a);
      Tensor& gb = grd(r.b);
      const std::size_t n = g.numel();
      if (ga.numel() == n) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        ga[0] += acc;
      }
      if (gb.numel() == n) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        gb[0] += acc;
      }
      return;
    }
    case Op::kSub: {
      Tensor& ga = grd(r.a);
      Tensor& gb = grd(r.b);
      const std::size_t n = g.numel();
      if (ga.numel() == n) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        ga[0] += acc;
      }
      if (gb.numel() == n) {
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        gb[0] -= acc;
      }
      return;
    }
    case Op::kMul: {
      const Tensor& a = val(r.a);
      const Tensor& b = val(r.b);
      Tensor& ga = grd(r.a);
      Tensor& gb = grd(r.b);
      const std::size_t n = g.numel();
      if (a.numel() == n && b.numel() == n) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b[i];
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a[i];
      } else if (a.is_scalar()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * b[i];
        ga[0] += acc;
        const double s = a[0];
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * s;
      } else {
        const double s = b[0];
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * a[i];
        gb[0] += acc;
      }
      return;
    }
    case Op::kMatmul: {
      const Tensor& a = val(r.a);
      const Tensor& b = val(r.b);
      Tensor& ga = grd(r.a);
      Tensor& gb = grd(r.b);
      const std::size_t m = a.rows(), k = a.cols();
      if (b.rank() == 2) {
        const std::size_t n = b.cols();
        const double* gp = g.data();
        const double* ap = a.data();
        const double* bp = b.data();
        double* gap = ga.data();
        double* gbp = gb.data();
        // dA = g B^T : dot of g row i with b row kk (both contiguous).
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = gp + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = bp + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            gap[i * k + kk] += acc;
          }
        }
        // dB = A^T g : axpy of g row i scaled by a[i][kk].
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = gp + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ap[i * k + kk];
            double* gbrow = gbp + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      } else {
        const double* gp = g.data();
        const double* ap = a.data();
        const double* x = b.data();
        double* gap = ga.data();
        double* gx = gb.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = gp[i];
          if (gi == 0.0) continue;
          double* garow = gap + i * k;
          const double* arow = ap + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            garow[kk] += gi * x[kk];
            gx[kk] += gi * arow[kk];
          }
        }
      }
      return;
    }
    case Op::kTanh: {
      const Tensor& y = r.value;
      Tensor& ga = grd(r.a);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i] * (1.0 - y[i] * y[i]);
      }
      return;
    }
    case Op::kSigmoid: {
      const Tensor& y = r.value;
      Tensor& ga = grd(r.a);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      return;
    }
    case Op::kExp: {
      const Tensor& y = r.value;
      Tensor& ga = grd(r.a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
      return;
    }
    case Op::kLog: {
      const Tensor& a = val(r.a);
      Tensor& ga = grd(r.a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / a[i];
      return;
    }
    case Op::kSquare: {
      const Tensor& a = val(r.a);
      Tensor& ga = grd(r.a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * 2.0 * a[i];
      return;
    }
    case Op::kSum: {
      Tensor& ga = grd(r.a);
      const double gv = g[0];
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
      return;
    }
    case Op::kRow: {
      Tensor& ga = grd(r.a);
      const std::size_t n = g.numel();
      double* dst = ga.data() + r.aux * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
      return;
    }
    case Op::kSoftmaxCE: {
      Tensor& ga = grd(r.a);
      const double gv = g[0];
      const std::size_t v = ga.numel();
      for (std::size_t i = 0; i < v; ++i) ga[i] += gv * r.scratch[i];
      ga[r.aux] -= gv;
      return;
    }
  }
}

void Tape::backward(Node root) {
  if (root.tape != this || root.id < 0 ||
      static_cast<std::size_t>(root.id) >= count_) {
    throw std::invalid_argument("backward: node does not belong to this tape");
  }
  if (!val(root.id).is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar");
  }
  // Owned (non-parameter) gradients are scratch space for this sweep;
  // parameter gradients accumulate until the caller clears them.
  for (int id = 0; id <= root.id; ++id) {
    Rec& r = recs_[static_cast<std::size_t>(id)];
    if (!r.ext_grad) r.grad.fill(0.0);
  }
  grd(root.id)[0] += 1.0;
  for (int id = root.id; id >= 0; --id) backprop_rec(id);
}

}  // namespace divgen
