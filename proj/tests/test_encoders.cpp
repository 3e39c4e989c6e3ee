#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mmalign/encoders.hpp"

using namespace mmalign;
using mmalign::testing::random_matrix;

namespace {

EncoderParams small_params(std::uint64_t seed, Index d = 4, Index dv = 5, Index da = 6, Index dr = 3) {
  Rng rng(seed);
  EncoderParams p = EncoderParams::init(d, dv, da, dr, rng);
  std::mt19937_64 noise(seed + 1);
  p.visual_bias.mutable_value() = random_matrix(noise, d, 1);
  p.attribute_bias.mutable_value() = random_matrix(noise, d, 1);
  p.relation_bias.mutable_value() = random_matrix(noise, d, 1);
  return p;
}

Eigen::VectorXd random_bag(std::mt19937_64& rng, Index k) {
  std::bernoulli_distribution bit(0.4);
  Eigen::VectorXd x(k);
  for (Index i = 0; i < k; ++i) x[i] = bit(rng) ? 1.0 : 0.0;
  return x;
}

}  // namespace

TEST(Encoders, InitShapesAndZeroBiases) {
  Rng rng(1);
  const EncoderParams p = EncoderParams::init(100, 4096, 1000, 1000, rng);
  EXPECT_EQ(p.visual_weight.rows(), 100);
  EXPECT_EQ(p.visual_weight.cols(), 4096);
  EXPECT_EQ(p.attribute_weight.cols(), 1000);
  EXPECT_TRUE(p.relation_bias.value().isZero(0.0));
  const double limit = std::sqrt(6.0 / (100 + 4096));
  EXPECT_LE(p.visual_weight.value().cwiseAbs().maxCoeff(), limit);
}

TEST(Encoders, ZeroWeightGivesBias) {
  EncoderParams p = small_params(2);
  p.visual_weight.mutable_value().setZero();
  std::mt19937_64 rng(3);
  const Eigen::VectorXd x = random_matrix(rng, 5, 1, 10.0);
  EXPECT_EQ(encode_visual(x, p), p.visual_bias.value().reshaped());
}

TEST(Encoders, IdentityWeight) {
  EncoderParams p = small_params(2, 4, 4);
  p.visual_weight.mutable_value() = ad::Matrix::Identity(4, 4);
  p.visual_bias.mutable_value().setZero();
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  EXPECT_EQ(encode_visual(x, p), x);
}

TEST(Encoders, VisualMatchesTripleLoop) {
  const EncoderParams p = small_params(4);
  std::mt19937_64 rng(5);
  const Eigen::VectorXd x = random_matrix(rng, 5, 1, 3.0);
  const ad::Matrix& w = p.visual_weight.value();
  const Eigen::VectorXd got = encode_visual(x, p);
  for (Index i = 0; i < 4; ++i) {
    double acc = p.visual_bias.value()(i, 0);
    for (Index j = 0; j < 5; ++j) acc += w(i, j) * x[j];
    EXPECT_NEAR(got[i], acc, 1e-12);
  }
}

TEST(Encoders, BagSelectorsAndLinearity) {
  const EncoderParams p = small_params(6);
  for (BagKind which : {BagKind::kAttribute, BagKind::kRelation}) {
    const ad::Matrix& w = p.bag_weight(which).value();
    const Eigen::VectorXd b = p.bag_bias(which).value().reshaped();
    const Index k = w.cols();
    EXPECT_EQ(encode_bag(Eigen::VectorXd::Zero(k), which, p), b);

    Eigen::VectorXd hot = Eigen::VectorXd::Zero(k);
    hot[1] = 1.0;
    EXPECT_LT((encode_bag(hot, which, p) - (w.col(1) + b)).norm(), 1e-14);

    Eigen::VectorXd other = Eigen::VectorXd::Zero(k);
    other[k - 1] = 1.0;
    const Eigen::VectorXd two = encode_bag(hot + other, which, p);
    EXPECT_LT((two - (encode_bag(hot, which, p) + encode_bag(other, which, p) - b)).norm(), 1e-14);

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const Eigen::VectorXd x = random_bag(rng, k);
      const Eigen::VectorXd y = random_bag(rng, k);
      const Eigen::VectorXd lhs = encode_bag(x + y, which, p) + b;
      const Eigen::VectorXd rhs = encode_bag(x, which, p) + encode_bag(y, which, p);
      ASSERT_LT((lhs - rhs).norm(), 1e-12);
    }
  }
}

TEST(Encoders, DimensionMismatchThrows) {
  const EncoderParams p = small_params(8);
  EXPECT_THROW(encode_visual(Eigen::VectorXd::Zero(4), p), DimensionError);
  EXPECT_THROW(encode_bag(Eigen::VectorXd::Zero(7), BagKind::kAttribute, p), DimensionError);
}

TEST(Encoders, BatchedRowsMatchSingleEntity) {
  const EncoderParams p = small_params(9);
  std::mt19937_64 rng(10);
  const ad::Matrix x = random_matrix(rng, 7, 5);
  const ad::Tensor out = encode_rows(ad::Tensor::matrix(x), p.visual_weight, p.visual_bias);
  ASSERT_EQ(out.rows(), 7);
  ASSERT_EQ(out.cols(), 4);
  for (Index i = 0; i < 7; ++i) {
    EXPECT_LT((out.value().row(i).transpose() - encode_visual(x.row(i).transpose(), p)).norm(), 1e-12);
  }
}
