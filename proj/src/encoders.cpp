#include "mmalign/encoders.hpp"

namespace mmalign {

EncoderParams EncoderParams::init(Index d, Index d_visual, Index d_attribute, Index d_relation, Rng& rng) {
  EncoderParams p;
  p.visual_weight = ad::Tensor::parameter(glorot_uniform(d, d_visual, rng));
  p.visual_bias = ad::Tensor::parameter_vector(Eigen::VectorXd::Zero(d));
  p.attribute_weight = ad::Tensor::parameter(glorot_uniform(d, d_attribute, rng));
  p.attribute_bias = ad::Tensor::parameter_vector(Eigen::VectorXd::Zero(d));
  p.relation_weight = ad::Tensor::parameter(glorot_uniform(d, d_relation, rng));
  p.relation_bias = ad::Tensor::parameter_vector(Eigen::VectorXd::Zero(d));
  return p;
}

const ad::Tensor& EncoderParams::bag_weight(BagKind which) const {
  return which == BagKind::kAttribute ? attribute_weight : relation_weight;
}

const ad::Tensor& EncoderParams::bag_bias(BagKind which) const {
  return which == BagKind::kAttribute ? attribute_bias : relation_bias;
}

Eigen::VectorXd encode_visual(const Eigen::Ref<const Eigen::VectorXd>& x_visual, const EncoderParams& params) {
  return affine(params.visual_weight.value(), params.visual_bias.value(), x_visual);
}

Eigen::VectorXd encode_bag(const Eigen::Ref<const Eigen::VectorXd>& bag, BagKind which,
                           const EncoderParams& params) {
  return affine(params.bag_weight(which).value(), params.bag_bias(which).value(), bag);
}

ad::Tensor encode_rows(const ad::Tensor& features, const ad::Tensor& weight, const ad::Tensor& bias) {
  return ad::add_bias(ad::matmul(features, ad::transpose(weight)), bias);
}

}  // namespace mmalign
