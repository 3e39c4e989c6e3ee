#include "mmalign/fusion.hpp"

#include <vector>

namespace mmalign {

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::kFull: return "full";
    case FusionVariant::kNoLowRank: return "no-lowrank";
    case FusionVariant::kNoAdaptive: return "no-adaptive";
    case FusionVariant::kConcat: return "concat-fusion";
  }
  return "unknown";
}

FusionVariant parse_fusion_variant(const std::string& name) {
  for (auto v : {FusionVariant::kFull, FusionVariant::kNoLowRank, FusionVariant::kNoAdaptive,
                 FusionVariant::kConcat}) {
    if (to_string(v) == name) return v;
  }
  throw ContractError("unknown variant '" + name + "' (expected full, no-lowrank, no-adaptive, concat-fusion)");
}

FusionParams FusionParams::init(Index d, Index out_dim, Index rank, FusionVariant variant, Rng& rng) {
  if (rank < 1) throw ContractError("fusion rank must be at least 1");
  FusionParams p;
  p.rank = rank;
  p.out_dim = out_dim;
  if (variant == FusionVariant::kConcat) {
    p.concat_projection = ad::Tensor::parameter(glorot_uniform(kModalities * d, out_dim, rng));
  } else {
    for (auto& q : p.modality_query) q = ad::Tensor::parameter(glorot_uniform(d, 1, rng));
    for (auto& f : p.factors) f = ad::Tensor::parameter(glorot_uniform(d + 1, rank * out_dim, rng));
  }
  p.bias = ad::Tensor::parameter_vector(Eigen::VectorXd::Zero(out_dim));
  return p;
}

Eigen::Vector3d modality_weights(std::span<const Eigen::VectorXd, kModalities> embeddings,
                                 std::span<const Eigen::VectorXd, kModalities> queries) {
  Eigen::Vector3d logits;
  for (int m = 0; m < kModalities; ++m) {
    if (queries[m].size() != embeddings[m].size()) throw DimensionError("modality_weights: query length mismatch");
    logits[m] = queries[m].dot(embeddings[m].array().tanh().matrix());
  }
  const Eigen::Vector3d w = (logits.array() - logits.maxCoeff()).exp();
  return w / w.sum();
}

Eigen::VectorXd full_tensor_fuse(std::span<const Eigen::VectorXd, kModalities> z, const ad::Tensor& weight,
                                 const Eigen::VectorXd& bias) {
  const ad::Shape& s = weight.shape();
  if (s.size() != 4 || s[0] != z[0].size() || s[1] != z[1].size() || s[2] != z[2].size() || s[3] != bias.size()) {
    throw DimensionError("full_tensor_fuse: weight " + ad::shape_string(s) + " does not fit inputs");
  }
  const std::vector<ad::Tensor> parts{ad::Tensor::vector(z[0]), ad::Tensor::vector(z[1]), ad::Tensor::vector(z[2])};
  const ad::Tensor outer = ad::outer_product(parts);
  const double* zt = outer.value().data();
  const double* w = weight.value().data();
  const Index cells = outer.numel();
  const Index out_dim = s[3];
  Eigen::VectorXd h = bias;
  for (Index c = 0; c < cells; ++c) {
    for (Index k = 0; k < out_dim; ++k) h[k] += w[c * out_dim + k] * zt[c];
  }
  return h;
}

ad::Tensor reconstruct_weight_tensor(std::span<const ad::Matrix, kModalities> factors, Index rank) {
  const Index width = factors[0].cols();
  if (rank < 1 || width % rank != 0) throw DimensionError("reconstruct_weight_tensor: bad rank");
  const Index out_dim = width / rank;
  const Index d0 = factors[0].rows();
  const Index d1 = factors[1].rows();
  const Index d2 = factors[2].rows();
  ad::Matrix storage = ad::Matrix::Zero(d0, d1 * d2 * out_dim);
  for (Index r = 0; r < rank; ++r)
    for (Index i = 0; i < d0; ++i)
      for (Index j = 0; j < d1; ++j)
        for (Index l = 0; l < d2; ++l)
          for (Index k = 0; k < out_dim; ++k) {
            const Index col = r * out_dim + k;
            storage(i, (j * d2 + l) * out_dim + k) += factors[0](i, col) * factors[1](j, col) * factors[2](l, col);
          }
  return ad::Tensor::with_shape(ad::Shape{d0, d1, d2, out_dim}, std::move(storage));
}

Eigen::VectorXd concat_fuse(std::span<const Eigen::VectorXd, kModalities> embeddings,
                            const Eigen::Ref<const ad::Matrix>& projection, const Eigen::VectorXd& bias) {
  Eigen::VectorXd joined(embeddings[0].size() + embeddings[1].size() + embeddings[2].size());
  joined << embeddings[0], embeddings[1], embeddings[2];
  if (projection.rows() != joined.size() || projection.cols() != bias.size()) {
    throw DimensionError("concat_fuse: projection does not fit inputs");
  }
  return projection.transpose() * joined + bias;
}

FusionTrace fuse(std::span<const ad::Tensor, kModalities> embeddings, const FusionParams& params,
                 FusionVariant variant) {
  const Index n = embeddings[0].rows();
  FusionTrace trace;
  if (variant == FusionVariant::kConcat) {
    const ad::Tensor joined = ad::concat(embeddings, 1);
    trace.fused = ad::add_bias(ad::matmul(joined, params.concat_projection), params.bias);
    return trace;
  }

  std::array<ad::Tensor, kModalities> scaled;
  if (variant == FusionVariant::kNoAdaptive) {
    trace.weights = ad::Tensor::matrix(ad::Matrix::Constant(n, kModalities, 1.0 / kModalities));
    for (int m = 0; m < kModalities; ++m) scaled[m] = ad::scale(embeddings[m], 1.0 / kModalities);
  } else {
    std::array<ad::Tensor, kModalities> logits;
    for (int m = 0; m < kModalities; ++m) {
      logits[m] = ad::matmul(ad::tanh(embeddings[m]), params.modality_query[m]);
    }
    trace.weights = ad::row_softmax(ad::concat(std::span<const ad::Tensor>(logits), 1));
    for (int m = 0; m < kModalities; ++m) {
      scaled[m] = ad::scale_rows(embeddings[m], ad::column(trace.weights, m));
    }
  }

  const ad::Tensor ones = ad::Tensor::matrix(ad::Matrix::Ones(n, 1));
  std::array<ad::Tensor, kModalities> projected;
  for (int m = 0; m < kModalities; ++m) {
    const ad::Tensor parts[] = {scaled[m], ones};
    projected[m] = ad::matmul(ad::concat(parts, 1), params.factors[m]);
  }
  const ad::Tensor combined = variant == FusionVariant::kNoLowRank
                                  ? ad::add(ad::add(projected[0], projected[1]), projected[2])
                                  : ad::hadamard(ad::hadamard(projected[0], projected[1]), projected[2]);
  trace.fused = ad::add_bias(ad::block_sum_cols(combined, params.rank), params.bias);
  return trace;
}

}  // namespace mmalign
