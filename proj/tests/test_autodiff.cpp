#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mmalign/autodiff.hpp"

namespace ad = mmalign::ad;
using mmalign::testing::check_gradients;
using mmalign::testing::random_matrix;

namespace {

ad::Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  ad::Matrix m(static_cast<ad::Index>(rows.size()), static_cast<ad::Index>(rows.begin()->size()));
  ad::Index i = 0;
  for (const auto& r : rows) {
    ad::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

ad::Vector vec(std::initializer_list<double> v) {
  ad::Vector out(static_cast<ad::Index>(v.size()));
  ad::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Weighted sum so every output entry carries a distinct cotangent.
ad::Tensor probe(const ad::Tensor& out, const ad::Matrix& weights) {
  return ad::sum(ad::hadamard(out, ad::Tensor::with_shape(out.shape(), weights)));
}

constexpr int kInstances = 100;
constexpr double kGradTol = 1e-4;

}  // namespace

TEST(Matmul, IdentityAndProjector) {
  auto c = ad::matmul(ad::Tensor::matrix(ad::Matrix::Identity(2, 2)),
                      ad::Tensor::matrix(mat({{1, 2}, {3, 4}})));
  EXPECT_EQ(c.value(), mat({{1, 2}, {3, 4}}));

  auto p = ad::matmul(ad::Tensor::matrix(mat({{1, 0}, {0, 0}})), ad::Tensor::matrix(mat({{5}, {7}})));
  EXPECT_EQ(p.value(), mat({{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  const ad::Matrix a = random_matrix(rng, 3, 4);
  const ad::Matrix b = random_matrix(rng, 4, 2);
  ad::Matrix expected = ad::Matrix::Zero(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 4; ++k) expected(i, j) += a(i, k) * b(k, j);
  auto c = ad::matmul(ad::Tensor::matrix(a), ad::Tensor::matrix(b));
  EXPECT_LT((c.value() - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ad::matmul(ad::Tensor::zeros({2, 3}), ad::Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const mmalign::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AssociativeOnRandomTriples) {
  std::mt19937_64 rng(11);
  for (int n = 0; n < kInstances; ++n) {
    auto a = ad::Tensor::matrix(random_matrix(rng, 3, 5));
    auto b = ad::Tensor::matrix(random_matrix(rng, 5, 4));
    auto c = ad::Tensor::matrix(random_matrix(rng, 4, 2));
    const ad::Matrix left = ad::matmul(ad::matmul(a, b), c).value();
    const ad::Matrix right = ad::matmul(a, ad::matmul(b, c)).value();
    EXPECT_LT((left - right).norm() / left.norm(), 1e-9);
  }
}

TEST(Hadamard, HandArithmetic) {
  EXPECT_EQ(ad::hadamard(ad::Tensor::vector(vec({1, 2, 3})), ad::Tensor::vector(vec({1, 1, 1}))).value(),
            ad::Matrix(vec({1, 2, 3})));
  EXPECT_EQ(ad::hadamard(ad::Tensor::vector(vec({2, -1})), ad::Tensor::vector(vec({3, 4}))).value(),
            ad::Matrix(vec({6, -4})));
  EXPECT_THROW(ad::hadamard(ad::Tensor::zeros({2}), ad::Tensor::zeros({3})), mmalign::DimensionError);
}

TEST(Hadamard, GradientOfSumIsOtherOperand) {
  std::mt19937_64 rng(3);
  const ad::Matrix bv = random_matrix(rng, 5, 1);
  std::vector<ad::Tensor> params{ad::Tensor::parameter(random_matrix(rng, 5, 1))};
  const auto b = ad::Tensor::matrix(bv);
  auto check = check_gradients(params, [&] { return ad::sum(ad::hadamard(params[0], b)); });
  EXPECT_LT(check.worst_relative_error, kGradTol);
  EXPECT_LT((params[0].grad() - bv).norm(), 1e-12);
}

TEST(Softmax, ReferenceValues) {
  auto u = ad::softmax(ad::Tensor::vector(vec({0, 0, 0}))).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u(i, 0), 1.0 / 3.0, 1e-15);

  auto s = ad::softmax(ad::Tensor::vector(vec({1000, 0}))).value();
  EXPECT_NEAR(s(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(s(1, 0), 0.0, 1e-12);

  auto l = ad::softmax(ad::Tensor::vector(vec({std::log(1.0), std::log(2.0), std::log(3.0)}))).value();
  EXPECT_NEAR(l(0, 0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(l(1, 0), 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(l(2, 0), 3.0 / 6.0, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int n = 0; n < kInstances; ++n) {
    const ad::Matrix x = random_matrix(rng, 7, 1, 10.0);
    const ad::Matrix p = ad::softmax(ad::Tensor::matrix(x)).value();
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GT(p.minCoeff(), 0.0);
    const ad::Matrix q = ad::softmax(ad::Tensor::matrix((x.array() + shift(rng)).matrix())).value();
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(ad::softmax(ad::Tensor::vector(vec({1, NAN}))), mmalign::NumericError);
}

TEST(Elementary, TanhOuterCosine) {
  EXPECT_EQ(ad::tanh(ad::Tensor::scalar(0.0)).item(), 0.0);

  std::vector<ad::Tensor> vs{ad::Tensor::vector(vec({1, 2})), ad::Tensor::vector(vec({3, 4}))};
  auto o = ad::outer_product(vs);
  EXPECT_EQ(o.shape(), (ad::Shape{2, 2}));
  EXPECT_EQ(o.value(), mat({{3, 4}, {6, 8}}));

  std::mt19937_64 rng(1);
  for (int n = 0; n < 20; ++n) {
    auto x = ad::Tensor::matrix(random_matrix(rng, 6, 1));
    EXPECT_NEAR(ad::cosine_sim(x, x).item(), 1.0, 1e-15);
  }
}

TEST(Elementary, OuterProductOfThreeIsThirdOrder) {
  std::vector<ad::Tensor> vs{ad::Tensor::vector(vec({1, 2})), ad::Tensor::vector(vec({3, 4, 5})),
                             ad::Tensor::vector(vec({-1, 2}))};
  auto o = ad::outer_product(vs);
  EXPECT_EQ(o.shape(), (ad::Shape{2, 3, 2}));
  const double* flat = o.value().data();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 2; ++k)
        EXPECT_EQ(flat[(i * 3 + j) * 2 + k], vs[0].value()(i, 0) * vs[1].value()(j, 0) * vs[2].value()(k, 0));
}

TEST(Elementary, ZeroVectorIsDegenerate) {
  EXPECT_THROW(ad::l2_normalize(ad::Tensor::zeros({4})), mmalign::NumericError);
  EXPECT_THROW(ad::normalize_rows(ad::Tensor::zeros({2, 3})), mmalign::NumericError);
  EXPECT_THROW(ad::cosine_sim(ad::Tensor::zeros({3}), ad::Tensor::vector(vec({1, 0, 0}))),
               mmalign::NumericError);
}

TEST(Elementary, ConcatLayout) {
  std::vector<ad::Tensor> cols{ad::Tensor::matrix(mat({{1}, {2}})), ad::Tensor::matrix(mat({{3, 4}, {5, 6}}))};
  EXPECT_EQ(ad::concat(cols, 1).value(), mat({{1, 3, 4}, {2, 5, 6}}));
  std::vector<ad::Tensor> rows{ad::Tensor::matrix(mat({{1, 2}})), ad::Tensor::matrix(mat({{3, 4}}))};
  EXPECT_EQ(ad::concat(rows, 0).value(), mat({{1, 2}, {3, 4}}));
  std::vector<ad::Tensor> vs{ad::Tensor::vector(vec({1})), ad::Tensor::vector(vec({2, 3}))};
  auto v = ad::concat(vs, 0);
  EXPECT_EQ(v.shape(), ad::Shape{3});
  std::vector<ad::Tensor> ragged{ad::Tensor::matrix(mat({{1, 2}})), ad::Tensor::matrix(mat({{3, 4}, {5, 6}}))};
  EXPECT_THROW(ad::concat(ragged, 1), mmalign::DimensionError);
}

TEST(Backward, SumAndSquare) {
  std::mt19937_64 rng(2);
  auto x = ad::Tensor::parameter(random_matrix(rng, 4, 3));
  {
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    ad::backward(ad::sum(x));
  }
  EXPECT_EQ(x.grad(), ad::Matrix::Ones(4, 3));

  x.zero_grad();
  {
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    ad::backward(ad::sum(ad::hadamard(x, x)));
  }
  EXPECT_LT((x.grad() - 2.0 * x.value()).norm(), 1e-15);
}

TEST(Backward, LossGradIsExactlyOneAndRecordCleared) {
  auto x = ad::Tensor::parameter(ad::Matrix::Constant(2, 2, 0.5));
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  auto loss = ad::sum(ad::tanh(x));
  EXPECT_EQ(tape.size(), 2u);
  ad::backward(loss);
  EXPECT_EQ(loss.grad()(0, 0), 1.0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, RecordIsTopological) {
  std::mt19937_64 rng(4);
  auto a = ad::Tensor::parameter(random_matrix(rng, 3, 3));
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  auto y = ad::sum(ad::row_softmax(ad::matmul(ad::tanh(a), a)));
  for (const auto& e : tape.entries()) {
    for (const auto& in : e.inputs) EXPECT_LT(in->id, e.output->id);
  }
  (void)y;
}

TEST(Backward, RejectsNonScalarAndUnrecordedLoss) {
  auto x = ad::Tensor::parameter(ad::Matrix::Ones(2, 2));
  ad::Tape tape;
  {
    ad::Tape::Scope scope(tape);
    EXPECT_THROW(ad::backward(ad::tanh(x)), mmalign::ContractError);
  }
  EXPECT_THROW(ad::backward(ad::sum(x)), mmalign::ContractError);
}

TEST(Backward, NoRecordingWithoutTape) {
  auto x = ad::Tensor::parameter(ad::Matrix::Ones(2, 2));
  auto y = ad::tanh(x);
  EXPECT_FALSE(y.requires_grad());
}

// One finite-difference sweep per differentiable op.
TEST(OpGradients, AllOpsMatchCentralDifferences) {
  using Fn = std::function<ad::Tensor(std::vector<ad::Tensor>&)>;
  struct Case {
    const char* name;
    std::vector<std::pair<ad::Index, ad::Index>> shapes;
    Fn fn;
  };
  const std::vector<ad::Index> seg{0, 1, 0, 2, 1, 0};
  const std::vector<ad::Index> rows{2, 0, 2, 1};
  Eigen::Matrix<ad::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols(3, 2);
  cols << 0, 3, 2, 2, 1, 0;

  const std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](auto& p) { return ad::matmul(p[0], p[1]); }},
      {"transpose", {{3, 2}}, [](auto& p) { return ad::transpose(p[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](auto& p) { return ad::add(p[0], p[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto& p) { return ad::sub(p[0], p[1]); }},
      {"hadamard", {{2, 3}, {2, 3}}, [](auto& p) { return ad::hadamard(p[0], p[1]); }},
      {"scale", {{2, 3}}, [](auto& p) { return ad::scale(p[0], -1.7); }},
      {"add_bias", {{4, 3}, {3, 1}}, [](auto& p) { return ad::add_bias(p[0], p[1]); }},
      {"scale_rows", {{4, 3}, {4, 1}}, [](auto& p) { return ad::scale_rows(p[0], p[1]); }},
      {"tanh", {{3, 3}}, [](auto& p) { return ad::tanh(p[0]); }},
      {"mean", {{3, 2}}, [](auto& p) { return ad::mean(p[0]); }},
      {"softmax", {{5, 1}}, [](auto& p) { return ad::softmax(p[0]); }},
      {"row_softmax", {{3, 4}}, [](auto& p) { return ad::row_softmax(p[0]); }},
      {"row_logsumexp", {{3, 4}}, [](auto& p) { return ad::row_logsumexp(p[0]); }},
      {"segment_softmax", {{6, 1}}, [&](auto& p) { return ad::segment_softmax(p[0], seg, 3); }},
      {"l2_normalize", {{5, 1}}, [](auto& p) { return ad::l2_normalize(p[0]); }},
      {"normalize_rows", {{3, 4}}, [](auto& p) { return ad::normalize_rows(p[0]); }},
      {"cosine_sim", {{5, 1}, {5, 1}}, [](auto& p) { return ad::cosine_sim(p[0], p[1]); }},
      {"row_dot", {{4, 3}, {4, 3}}, [](auto& p) { return ad::row_dot(p[0], p[1]); }},
      {"reflect_rows", {{4, 3}, {4, 3}}, [](auto& p) { return ad::reflect_rows(p[0], p[1]); }},
      {"concat0", {{2, 3}, {1, 3}}, [](auto& p) { return ad::concat(std::span(p), 0); }},
      {"concat1", {{2, 3}, {2, 1}}, [](auto& p) { return ad::concat(std::span(p), 1); }},
      {"column", {{3, 4}}, [](auto& p) { return ad::column(p[0], 2); }},
      {"gather_rows", {{3, 2}}, [&](auto& p) { return ad::gather_rows(p[0], rows); }},
      {"scatter_add_rows", {{4, 2}}, [&](auto& p) { return ad::scatter_add_rows(p[0], rows, 3); }},
      {"take_along_rows", {{3, 4}}, [&](auto& p) { return ad::take_along_rows(p[0], cols); }},
      {"block_sum_cols", {{3, 6}}, [](auto& p) { return ad::block_sum_cols(p[0], 3); }},
  };

  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int n = 0; n < kInstances; ++n) {
      std::vector<ad::Tensor> params;
      for (auto [r, k] : c.shapes) params.push_back(ad::Tensor::parameter(random_matrix(rng, r, k, 2.0)));
      auto out_shape = c.fn(params);
      const ad::Matrix weights = random_matrix(rng, out_shape.rows(), out_shape.cols());
      auto check = check_gradients(params, [&] { return probe(c.fn(params), weights); });
      worst = std::max(worst, check.worst_relative_error);
    }
    EXPECT_LT(worst, kGradTol) << c.name;
    RecordProperty(c.name, std::to_string(worst));
  }
}
