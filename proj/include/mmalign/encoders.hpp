#pragma once

#include <Eigen/Core>

#include "mmalign/autodiff.hpp"
#include "mmalign/random.hpp"

namespace mmalign {

enum class BagKind { kAttribute, kRelation };

// Affine projections from raw modality features to d-dimensional embeddings.
struct EncoderParams {
  ad::Tensor visual_weight;     // d x d_v
  ad::Tensor visual_bias;       // d
  ad::Tensor attribute_weight;  // d x d_a
  ad::Tensor attribute_bias;    // d
  ad::Tensor relation_weight;   // d x d_r
  ad::Tensor relation_bias;     // d

  // Glorot-uniform weights, zero biases.
  static EncoderParams init(Index d, Index d_visual, Index d_attribute, Index d_relation, Rng& rng);

  Index embedding_dim() const { return visual_weight.rows(); }
  const ad::Tensor& bag_weight(BagKind which) const;
  const ad::Tensor& bag_bias(BagKind which) const;
};

// W x + b for one feature vector.
template <typename DW, typename DB, typename DX>
Eigen::Matrix<typename DX::Scalar, Eigen::Dynamic, 1> affine(const Eigen::MatrixBase<DW>& weight,
                                                             const Eigen::MatrixBase<DB>& bias,
                                                             const Eigen::MatrixBase<DX>& x) {
  if (weight.cols() != x.size() || weight.rows() != bias.size()) {
    throw DimensionError("affine: weight " + std::to_string(weight.rows()) + "x" +
                         std::to_string(weight.cols()) + " does not fit input of length " +
                         std::to_string(x.size()));
  }
  return weight * x.reshaped() + bias.reshaped();
}

Eigen::VectorXd encode_visual(const Eigen::Ref<const Eigen::VectorXd>& x_visual, const EncoderParams& params);
Eigen::VectorXd encode_bag(const Eigen::Ref<const Eigen::VectorXd>& bag, BagKind which,
                           const EncoderParams& params);

// Row-wise over an entity batch: features[N x d_in] -> N x d.
ad::Tensor encode_rows(const ad::Tensor& features, const ad::Tensor& weight, const ad::Tensor& bias);

}  // namespace mmalign
