#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmalign/errors.hpp"

// Dense reverse-mode differentiation over row-major Eigen storage.
//
// A Tensor is a cheap handle to a shared node. Rank-0 tensors are stored as
// 1x1, rank-1 tensors of length n as n x 1, and higher ranks as
// shape[0] x prod(shape[1:]), so value().data() is always the row-major
// flattening of the logical array.
//
// Operations record themselves on the thread's active Tape when one is
// installed (see Tape::Scope) and at least one input requires a gradient.
// With no active tape every op is a pure function of its inputs.

namespace mmalign {
using Index = Eigen::Index;
}  // namespace mmalign

namespace mmalign::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  Matrix value;
  Matrix grad;  // parameters: always allocated; op outputs: on first backward use
  bool requires_grad = false;
  std::uint64_t id = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor vector(const Vector& v);
  static Tensor matrix(const Matrix& m);
  static Tensor zeros(const Shape& shape);
  static Tensor with_shape(const Shape& shape, Matrix storage);
  // Differentiable leaf. Gradients accumulate across backward passes until
  // zero_grad() is called.
  static Tensor parameter(const Matrix& m);
  static Tensor parameter_vector(const Vector& v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return node_->value.size(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }

  const Matrix& value() const { return node_->value; }
  // Optimizers write parameters in place; never call this on a recorded node.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  double item() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor make_node(Shape shape, Matrix value, bool requires_grad);

  std::shared_ptr<Node> node_;
};

// Ordered computation record. Entries are appended in execution order, so
// every entry's inputs were produced earlier.
class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
              std::function<void()> rule);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Runs every rule once, newest first, then clears the record. Rules whose
  // output received no gradient are skipped.
  void run_backward();

  static Tape* active();

  // Installs a tape as the thread's recording context for the scope lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<Entry> entries_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. All shapes are explicit; the only broadcasts are scalar scaling
// and the named bias / row-scaling ops.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[m x n] + b[n] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Row i of x[m x n] multiplied by s[i].
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x);
Tensor row_softmax(const Tensor& x);
Tensor row_logsumexp(const Tensor& x);
// Softmax within groups: segment[e] names the group of entry e.
Tensor segment_softmax(const Tensor& logits, std::span<const Index> segment,
                       Index segment_count);

Tensor l2_normalize(const Tensor& x);
Tensor normalize_rows(const Tensor& x);
Tensor cosine_sim(const Tensor& a, const Tensor& b);
// Per-row inner product: out[i] = a.row(i) . b.row(i).
Tensor row_dot(const Tensor& a, const Tensor& b);
// Per-row Householder reflection: out.row(i) = x_i - 2 (x_i . h_i) h_i, for
// unit rows h_i.
Tensor reflect_rows(const Tensor& x, const Tensor& h);

// axis 0 stacks rows (or joins vectors), axis 1 joins columns.
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor column(const Tensor& x, Index j);
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);
Tensor scatter_add_rows(const Tensor& x, std::span<const Index> target_rows,
                        Index row_count);
// out(i, c) = x(i, columns(i, c)).
Tensor take_along_rows(const Tensor& x,
                       const Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>& columns);
// x[m x (blocks*n)] -> sum of the column blocks, m x n.
Tensor block_sum_cols(const Tensor& x, Index blocks);

// Outer product of M vectors as an M-order tensor. Value-only.
Tensor outer_product(std::span<const Tensor> vectors);

}  // namespace mmalign::ad
