#include "mmalign/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmalign::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_id{1};

Index storage_rows(const Shape& shape) { return shape.empty() ? 1 : shape[0]; }

Index storage_cols(const Shape& shape) {
  Index cols = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
  return cols;
}

bool is_vector_like(const Tensor& t) {
  return t.rank() == 1 || (t.rank() == 2 && t.cols() == 1);
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Registers `out` on the active tape with the given local rule.
void link(std::initializer_list<const Tensor*> inputs, const Tensor& out,
          std::function<void()> rule) {
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor* t : inputs) nodes.push_back(t->node());
  g_active_tape->record(std::move(nodes), out.node(), std::move(rule));
}

Shape vector_shape(Index n) { return Shape{n}; }

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_node(Shape shape, Matrix value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

namespace {

Tensor make_matrix_node(Matrix value, bool requires_grad) {
  Shape shape{value.rows(), value.cols()};
  return make_node(std::move(shape), std::move(value), requires_grad);
}

}  // namespace

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return make_node(Shape{}, std::move(m), false);
}

Tensor Tensor::vector(const Vector& v) {
  return make_node(vector_shape(v.size()), Matrix(v), false);
}

Tensor Tensor::matrix(const Matrix& m) { return make_node(Shape{m.rows(), m.cols()}, m, false); }

Tensor Tensor::zeros(const Shape& shape) {
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("zeros: extents must be positive, got " + shape_string(shape));
  }
  return make_node(shape, Matrix::Zero(storage_rows(shape), storage_cols(shape)), false);
}

Tensor Tensor::with_shape(const Shape& shape, Matrix storage) {
  if (storage.rows() != storage_rows(shape) || storage.cols() != storage_cols(shape)) {
    throw DimensionError("with_shape: storage does not match " + shape_string(shape));
  }
  return make_node(shape, std::move(storage), false);
}

Tensor Tensor::parameter(const Matrix& m) {
  Tensor t = make_node(Shape{m.rows(), m.cols()}, m, true);
  t.node_->grad = Matrix::Zero(m.rows(), m.cols());
  return t;
}

Tensor Tensor::parameter_vector(const Vector& v) {
  Tensor t = make_node(vector_shape(v.size()), Matrix(v), true);
  t.node_->grad = Matrix::Zero(v.size(), 1);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  }
  return node_->value(0, 0);
}

void Tensor::zero_grad() {
  if (node_->requires_grad && node_->grad.size() > 0) node_->grad.setZero();
}

void Tape::record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
                  std::function<void()> rule) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::run_backward() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.size() == 0) continue;  // nothing downstream used this value
    for (const auto& in : it->inputs) {
      if (in->requires_grad && in->grad.size() == 0) in->grad = Matrix::Zero(in->value.rows(), in->value.cols());
    }
    it->backward();
  }
  entries_.clear();
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  Tape* tape = Tape::active();
  if (tape == nullptr || !loss.requires_grad()) {
    throw ContractError("backward: loss was not produced by recorded operations");
  }
  loss.node()->grad = Matrix::Ones(1, 1);
  tape->run_backward();
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool rec = recording({&a, &b});
  Tensor out = make_node(Shape{a.rows(), b.cols()}, a.value() * b.value(), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
      if (an->requires_grad) an->grad.noalias() += on->grad * bn->value.transpose();
      if (bn->requires_grad) bn->grad.noalias() += an->value.transpose() * on->grad;
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const bool rec = recording({&a});
  Tensor out = make_node(Shape{a.cols(), a.rows()}, a.value().transpose(), rec);
  if (rec) {
    link({&a}, out, [an = a.node(), on = out.node()] {
      if (an->requires_grad) an->grad += on->grad.transpose();
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool rec = recording({&a, &b});
  Tensor out = make_node(a.shape(), a.value() + b.value(), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
      if (an->requires_grad) an->grad += on->grad;
      if (bn->requires_grad) bn->grad += on->grad;
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool rec = recording({&a, &b});
  Tensor out = make_node(a.shape(), a.value() - b.value(), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
      if (an->requires_grad) an->grad += on->grad;
      if (bn->requires_grad) bn->grad -= on->grad;
    });
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  const bool rec = recording({&a, &b});
  Tensor out = make_node(a.shape(), a.value().cwiseProduct(b.value()), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
      if (an->requires_grad) an->grad += on->grad.cwiseProduct(bn->value);
      if (bn->requires_grad) bn->grad += on->grad.cwiseProduct(an->value);
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  const bool rec = recording({&a});
  Tensor out = make_node(a.shape(), a.value() * factor, rec);
  if (rec) {
    link({&a}, out, [an = a.node(), on = out.node(), factor] {
      if (an->requires_grad) an->grad += factor * on->grad;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  if (!is_vector_like(bias) || bias.numel() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit rows of " +
                         shape_string(x.shape()));
  }
  const bool rec = recording({&x, &bias});
  Matrix value = x.value();
  value.rowwise() += bias.value().reshaped().transpose();
  Tensor out = make_node(x.shape(), std::move(value), rec);
  if (rec) {
    link({&x, &bias}, out, [xn = x.node(), bn = bias.node(), on = out.node()] {
      if (xn->requires_grad) xn->grad += on->grad;
      if (bn->requires_grad) bn->grad.reshaped() += on->grad.colwise().sum().transpose();
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_matrix(x, "scale_rows");
  if (!is_vector_like(s) || s.numel() != x.rows()) {
    throw DimensionError("scale_rows: scales " + shape_string(s.shape()) + " do not fit " +
                         shape_string(x.shape()));
  }
  const bool rec = recording({&x, &s});
  Matrix value = s.value().reshaped().asDiagonal() * x.value();
  Tensor out = make_node(x.shape(), std::move(value), rec);
  if (rec) {
    link({&x, &s}, out, [xn = x.node(), sn = s.node(), on = out.node()] {
      if (xn->requires_grad) xn->grad += sn->value.reshaped().asDiagonal() * on->grad;
      if (sn->requires_grad) {
        sn->grad.reshaped() += on->grad.cwiseProduct(xn->value).rowwise().sum();
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  const bool rec = recording({&x});
  Tensor out = make_node(x.shape(), x.value().array().tanh().matrix(), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node()] {
      if (xn->requires_grad) {
        xn->grad.array() += on->grad.array() * (1.0 - on->value.array().square());
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rec = recording({&x});
  Matrix value(1, 1);
  value(0, 0) = x.value().sum();
  Tensor out = make_node(Shape{}, std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node()] {
      if (xn->requires_grad) xn->grad.array() += on->grad(0, 0);
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

// Softmax of each row of `logits` with max-subtraction.
Matrix softmax_rows_value(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double hi = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - hi).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& x) {
  if (!is_vector_like(x) || x.numel() < 1) {
    throw DimensionError("softmax: expected a non-empty vector, got " + shape_string(x.shape()));
  }
  require_finite(x.value(), "softmax");
  const bool rec = recording({&x});
  Matrix y = softmax_rows_value(x.value().reshaped().transpose()).transpose();
  Tensor out = make_node(x.shape(), std::move(y), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node()] {
      if (!xn->requires_grad) return;
      const double inner = on->grad.reshaped().dot(on->value.reshaped());
      xn->grad.array() += on->value.array() * (on->grad.array() - inner);
    });
  }
  return out;
}

Tensor row_softmax(const Tensor& x) {
  require_matrix(x, "row_softmax");
  require_finite(x.value(), "row_softmax");
  const bool rec = recording({&x});
  Tensor out = make_node(x.shape(), softmax_rows_value(x.value()), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node()] {
      if (!xn->requires_grad) return;
      const Eigen::VectorXd inner = on->grad.cwiseProduct(on->value).rowwise().sum();
      xn->grad.array() += on->value.array() * (on->grad.colwise() - inner).array();
    });
  }
  return out;
}

Tensor row_logsumexp(const Tensor& x) {
  require_matrix(x, "row_logsumexp");
  require_finite(x.value(), "row_logsumexp");
  const bool rec = recording({&x});
  Matrix value(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const double hi = x.value().row(i).maxCoeff();
    value(i, 0) = hi + std::log((x.value().row(i).array() - hi).exp().sum());
  }
  Tensor out = make_node(vector_shape(x.rows()), std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node()] {
      if (!xn->requires_grad) return;
      const Matrix p = softmax_rows_value(xn->value);
      xn->grad += on->grad.reshaped().asDiagonal() * p;
    });
  }
  return out;
}

Tensor segment_softmax(const Tensor& logits, std::span<const Index> segment,
                       Index segment_count) {
  if (!is_vector_like(logits) || static_cast<std::size_t>(logits.numel()) != segment.size()) {
    throw DimensionError("segment_softmax: " + std::to_string(segment.size()) +
                         " segment ids for logits " + shape_string(logits.shape()));
  }
  require_finite(logits.value(), "segment_softmax");
  std::vector<Index> seg(segment.begin(), segment.end());
  for (Index s : seg) {
    if (s < 0 || s >= segment_count) throw DimensionError("segment_softmax: segment id out of range");
  }
  const auto x = logits.value().reshaped();
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(segment_count, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < seg.size(); ++e) hi[seg[e]] = std::max(hi[seg[e]], x[e]);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(segment_count);
  Matrix y(logits.rows(), logits.cols());
  auto yv = y.reshaped();
  for (std::size_t e = 0; e < seg.size(); ++e) {
    yv[e] = std::exp(x[e] - hi[seg[e]]);
    total[seg[e]] += yv[e];
  }
  for (std::size_t e = 0; e < seg.size(); ++e) yv[e] /= total[seg[e]];

  const bool rec = recording({&logits});
  Tensor out = make_node(logits.shape(), std::move(y), rec);
  if (rec) {
    link({&logits}, out, [ln = logits.node(), on = out.node(), seg = std::move(seg), segment_count] {
      if (!ln->requires_grad) return;
      const auto yv = on->value.reshaped();
      const auto gy = on->grad.reshaped();
      Eigen::VectorXd inner = Eigen::VectorXd::Zero(segment_count);
      for (std::size_t e = 0; e < seg.size(); ++e) inner[seg[e]] += gy[e] * yv[e];
      auto gx = ln->grad.reshaped();
      for (std::size_t e = 0; e < seg.size(); ++e) gx[e] += yv[e] * (gy[e] - inner[seg[e]]);
    });
  }
  return out;
}

Tensor l2_normalize(const Tensor& x) {
  if (!is_vector_like(x)) {
    throw DimensionError("l2_normalize: expected a vector, got " + shape_string(x.shape()));
  }
  const double norm = x.value().norm();
  if (!(norm > 0.0)) throw NumericError("l2_normalize: zero-norm input");
  const bool rec = recording({&x});
  Tensor out = make_node(x.shape(), x.value() / norm, rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), norm] {
      if (!xn->requires_grad) return;
      const double inner = on->grad.reshaped().dot(on->value.reshaped());
      xn->grad += (on->grad - inner * on->value) / norm;
    });
  }
  return out;
}

Tensor normalize_rows(const Tensor& x) {
  require_matrix(x, "normalize_rows");
  const Eigen::VectorXd norms = x.value().rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0)) {
      throw NumericError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
  }
  const bool rec = recording({&x});
  Matrix y = norms.cwiseInverse().asDiagonal() * x.value();
  Tensor out = make_node(x.shape(), std::move(y), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), norms] {
      if (!xn->requires_grad) return;
      const Eigen::VectorXd inner = on->grad.cwiseProduct(on->value).rowwise().sum();
      Matrix g = on->grad - inner.asDiagonal() * on->value;
      xn->grad += norms.cwiseInverse().asDiagonal() * g;
    });
  }
  return out;
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  if (!is_vector_like(a) || !is_vector_like(b) || a.numel() != b.numel()) {
    throw DimensionError("cosine_sim: expected equal-length vectors, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const double na = a.value().norm();
  const double nb = b.value().norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine_sim: zero-norm input");
  const double s = a.value().reshaped().dot(b.value().reshaped()) / (na * nb);
  const bool rec = recording({&a, &b});
  Matrix value(1, 1);
  value(0, 0) = s;
  Tensor out = make_node(Shape{}, std::move(value), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node(), na, nb, s] {
      const double g = on->grad(0, 0);
      if (an->requires_grad) {
        an->grad += g * (bn->value / (na * nb) - s * an->value / (na * na));
      }
      if (bn->requires_grad) {
        bn->grad += g * (an->value / (na * nb) - s * bn->value / (nb * nb));
      }
    });
  }
  return out;
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_dot");
  require_same_shape(a, b, "row_dot");
  const bool rec = recording({&a, &b});
  Matrix value = a.value().cwiseProduct(b.value()).rowwise().sum();
  Tensor out = make_node(vector_shape(a.rows()), std::move(value), rec);
  if (rec) {
    link({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
      const auto g = on->grad.reshaped();
      if (an->requires_grad) an->grad += g.asDiagonal() * bn->value;
      if (bn->requires_grad) bn->grad += g.asDiagonal() * an->value;
    });
  }
  return out;
}

Tensor reflect_rows(const Tensor& x, const Tensor& h) {
  require_matrix(x, "reflect_rows");
  require_same_shape(x, h, "reflect_rows");
  const bool rec = recording({&x, &h});
  const Eigen::VectorXd p = x.value().cwiseProduct(h.value()).rowwise().sum();
  Matrix value = x.value() - 2.0 * p.asDiagonal() * h.value();
  Tensor out = make_node(x.shape(), std::move(value), rec);
  if (rec) {
    link({&x, &h}, out, [xn = x.node(), hn = h.node(), on = out.node(), p] {
      const Eigen::VectorXd gh = on->grad.cwiseProduct(hn->value).rowwise().sum();
      if (xn->requires_grad) xn->grad += on->grad - 2.0 * gh.asDiagonal() * hn->value;
      if (hn->requires_grad) {
        hn->grad -= 2.0 * (p.asDiagonal() * on->grad + gh.asDiagonal() * xn->value);
      }
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  const bool vectors = parts[0].rank() == 1;
  Index rows = 0;
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (vectors) {
      if (p.rank() != 1 || axis != 0) {
        throw DimensionError("concat: vectors join only along axis 0, got " + shape_string(p.shape()));
      }
      rows += p.rows();
      cols = 1;
      continue;
    }
    require_matrix(p, "concat");
    if (axis == 0) {
      if (cols != 0 && p.cols() != cols) {
        throw DimensionError("concat: column extents differ at " + shape_string(p.shape()));
      }
      cols = p.cols();
      rows += p.rows();
    } else {
      if (rows != 0 && p.rows() != rows) {
        throw DimensionError("concat: row extents differ at " + shape_string(p.shape()));
      }
      rows = p.rows();
      cols += p.cols();
    }
  }
  Matrix value(rows, cols);
  bool rec = false;
  Index offset = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      value.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      value.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
    rec = rec || (Tape::active() != nullptr && p.requires_grad());
  }
  Tensor out = make_node(vectors ? vector_shape(rows) : Shape{rows, cols}, std::move(value), rec);
  if (rec) {
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Tape::active()->record(nodes, out.node(), [nodes, on = out.node(), axis] {
      Index off = 0;
      for (const auto& n : nodes) {
        if (axis == 0) {
          if (n->requires_grad) n->grad += on->grad.middleRows(off, n->value.rows());
          off += n->value.rows();
        } else {
          if (n->requires_grad) n->grad += on->grad.middleCols(off, n->value.cols());
          off += n->value.cols();
        }
      }
    });
  }
  return out;
}

Tensor column(const Tensor& x, Index j) {
  require_matrix(x, "column");
  if (j < 0 || j >= x.cols()) throw DimensionError("column: index out of range");
  const bool rec = recording({&x});
  Tensor out = make_node(vector_shape(x.rows()), Matrix(x.value().col(j)), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), j] {
      if (xn->requires_grad) xn->grad.col(j) += on->grad;
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
  require_matrix(x, "gather_rows");
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix value(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[k]) + " outside " +
                           shape_string(x.shape()));
    }
    value.row(static_cast<Index>(k)) = x.value().row(idx[k]);
  }
  const bool rec = recording({&x});
  Tensor out = make_matrix_node(std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), idx = std::move(idx)] {
      if (!xn->requires_grad) return;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        xn->grad.row(idx[k]) += on->grad.row(static_cast<Index>(k));
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(const Tensor& x, std::span<const Index> target_rows, Index row_count) {
  require_matrix(x, "scatter_add_rows");
  if (static_cast<std::size_t>(x.rows()) != target_rows.size()) {
    throw DimensionError("scatter_add_rows: " + std::to_string(target_rows.size()) +
                         " targets for " + shape_string(x.shape()));
  }
  std::vector<Index> idx(target_rows.begin(), target_rows.end());
  Matrix value = Matrix::Zero(row_count, x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= row_count) throw DimensionError("scatter_add_rows: target out of range");
    value.row(idx[k]) += x.value().row(static_cast<Index>(k));
  }
  const bool rec = recording({&x});
  Tensor out = make_node(Shape{row_count, x.cols()}, std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), idx = std::move(idx)] {
      if (!xn->requires_grad) return;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        xn->grad.row(static_cast<Index>(k)) += on->grad.row(idx[k]);
      }
    });
  }
  return out;
}

Tensor take_along_rows(const Tensor& x,
                       const Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& columns) {
  require_matrix(x, "take_along_rows");
  if (columns.rows() != x.rows()) {
    throw DimensionError("take_along_rows: index rows do not match " + shape_string(x.shape()));
  }
  Matrix value(columns.rows(), columns.cols());
  for (Index i = 0; i < columns.rows(); ++i) {
    for (Index c = 0; c < columns.cols(); ++c) {
      const Index j = columns(i, c);
      if (j < 0 || j >= x.cols()) throw DimensionError("take_along_rows: column out of range");
      value(i, c) = x.value()(i, j);
    }
  }
  const bool rec = recording({&x});
  Tensor out = make_matrix_node(std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), columns] {
      if (!xn->requires_grad) return;
      for (Index i = 0; i < columns.rows(); ++i) {
        for (Index c = 0; c < columns.cols(); ++c) xn->grad(i, columns(i, c)) += on->grad(i, c);
      }
    });
  }
  return out;
}

Tensor block_sum_cols(const Tensor& x, Index blocks) {
  require_matrix(x, "block_sum_cols");
  if (blocks < 1 || x.cols() % blocks != 0) {
    throw DimensionError("block_sum_cols: " + std::to_string(blocks) + " blocks do not divide " +
                         shape_string(x.shape()));
  }
  const Index width = x.cols() / blocks;
  Matrix value = x.value().leftCols(width);
  for (Index b = 1; b < blocks; ++b) value += x.value().middleCols(b * width, width);
  const bool rec = recording({&x});
  Tensor out = make_node(Shape{x.rows(), width}, std::move(value), rec);
  if (rec) {
    link({&x}, out, [xn = x.node(), on = out.node(), blocks, width] {
      if (!xn->requires_grad) return;
      for (Index b = 0; b < blocks; ++b) xn->grad.middleCols(b * width, width) += on->grad;
    });
  }
  return out;
}

Tensor outer_product(std::span<const Tensor> vectors) {
  if (vectors.empty()) throw ContractError("outer_product: no inputs");
  Shape shape;
  Index total = 1;
  for (const Tensor& v : vectors) {
    if (!is_vector_like(v)) throw DimensionError("outer_product: inputs must be vectors");
    shape.push_back(v.numel());
    total *= v.numel();
  }
  // Row-major flattening: the last factor varies fastest.
  std::vector<double> flat(static_cast<std::size_t>(total));
  std::vector<Index> pos(vectors.size(), 0);
  for (Index k = 0; k < total; ++k) {
    double p = 1.0;
    for (std::size_t m = 0; m < vectors.size(); ++m) p *= vectors[m].value().reshaped()[pos[m]];
    flat[static_cast<std::size_t>(k)] = p;
    for (std::size_t m = vectors.size(); m-- > 0;) {
      if (++pos[m] < shape[m]) break;
      pos[m] = 0;
    }
  }
  Matrix storage = Eigen::Map<Matrix>(flat.data(), storage_rows(shape), storage_cols(shape));
  return Tensor::with_shape(shape, std::move(storage));
}

}  // namespace mmalign::ad
