#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "divgen/tensor.hpp"

namespace divgen {

class Tape;

// Trainable tensor paired with its gradient accumulator. Gradients keep
// accumulating across backward passes until zero_grad() is called.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
  std::size_t numel() const { return value.numel(); }
};

// Handle to a node on a Tape. Cheap to copy; valid until the tape is reset.
struct Node {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
};

// Reverse-mode computation graph. Nodes are appended in evaluation order, so
// tape order is a topological order and the backward sweep visits each node
// exactly once, in reverse. Single-threaded; reset() reuses node storage
// across iterations.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant leaf. Its gradient is tracked (readable for tests) but owned by
  // the tape.
  Node input(Tensor value);
  Node input_scalar(double v) { return input(Tensor::scalar(v)); }
  Node input_vector(std::vector<double> v) {
    return input(Tensor::from_vector(std::move(v)));
  }

  // Leaf bound to external parameter storage; backward accumulates straight
  // into p.grad.
  Node param(Parameter& p);

  // Propagates d(root)/d(node) into every node's gradient. root must be a
  // scalar. Repeated calls without zeroing accumulate.
  void backward(Node root);

  // Drops all nodes but keeps their buffers for reuse.
  void reset() { count_ = 0; }

  std::size_t size() const { return count_; }

  const Tensor& value_of(int id) const;
  const Tensor& grad_of(int id) const;

  friend Node matmul(Node a, Node b);
  friend Node add(Node a, Node b);
  friend Node sub(Node a, Node b);
  friend Node mul(Node a, Node b);
  friend Node tanh(Node a);
  friend Node sigmoid(Node a);
  friend Node exp(Node a);
  friend Node log(Node a);
  friend Node square(Node a);
  friend Node sum(Node a);
  friend Node row(Node a, std::size_t index);
  friend Node softmax_cross_entropy(Node logits, std::size_t target);

 private:
  enum class Op : unsigned char {
    kInput,
    kParam,
    kAdd,
    kSub,
    kMul,
    kMatmul,
    kTanh,
    kSigmoid,
    kExp,
    kLog,
    kSquare,
    kSum,
    kRow,
    kSoftmaxCE,
  };

  struct Rec {
    Op op = Op::kInput;
    int a = -1;
    int b = -1;
    std::size_t aux = 0;          // row index / cross-entropy target
    Tensor value;                 // owned storage (unused for kParam)
    Tensor grad;
    const Tensor* ext_value = nullptr;  // set for kParam
    Tensor* ext_grad = nullptr;
    std::vector<double> scratch;  // softmax probabilities for kSoftmaxCE
  };

  Rec& push(Op op, int a, int b);
  template <typename F>
  static Node unary(Node a, Op op, const char* name, F f);
  const Tensor& val(int id) const {
    const Rec& r = recs_[static_cast<std::size_t>(id)];
    return r.ext_value ? *r.ext_value : r.value;
  }
  Tensor& grd(int id) {
    Rec& r = recs_[static_cast<std::size_t>(id)];
    return r.ext_grad ? *r.ext_grad : r.grad;
  }
  void backprop_rec(int id);

  // Deque keeps references into existing records valid while new ones are
  // pushed; op builders rely on that. Slots past count_ are reused on push.
  std::deque<Rec> recs_;
  std::size_t count_ = 0;
};

// Graph-building operations. Forward values are computed eagerly; each op
// checks its output for NaN/Inf and throws std::domain_error on violation.
Node matmul(Node a, Node b);
Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);
Node tanh(Node a);
Node sigmoid(Node a);
Node exp(Node a);
Node log(Node a);
Node square(Node a);
Node sum(Node a);
// Selects row `index` of a rank-2 node; backward scatters into that row.
Node row(Node a, std::size_t index);
// Returns -log softmax(logits)[target] as a scalar node.
Node softmax_cross_entropy(Node logits, std::size_t target);

// y = W x + b for rank-2 W and rank-1 x, b.
inline Node affine(Node w, Node x, Node b) { return add(matmul(w, x), b); }

}  // namespace divgen
