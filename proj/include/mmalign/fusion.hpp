#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "mmalign/autodiff.hpp"
#include "mmalign/random.hpp"

// Local multi-modal fusion of the visual, attribute and relation embeddings.
//
// Each modality embedding e_m is scaled by an entity-specific weight
// alpha_m = softmax_m(w_m . tanh(e_m)) and augmented with a trailing 1,
// z_m = [alpha_m e_m; 1]. Tensor fusion contracts Z = z_v (x) z_a (x) z_r
// with a weight tensor W of shape (d_v+1, d_a+1, d_r+1, d_h). With W written
// as a rank-R sum of outer products of per-modality factors w_m^(i), the
// contraction collapses to
//
//   h = sum_i (w_v^(i)' z_v) o (w_a^(i)' z_a) o (w_r^(i)' z_r) + b,
//
// which never materializes Z or W.

namespace mmalign {

enum class FusionVariant {
  kFull,        // adaptive weights + low-rank fusion
  kNoLowRank,   // per-modality terms summed instead of multiplied
  kNoAdaptive,  // alpha_m fixed at 1/3
  kConcat,      // linear projection of [e_v | e_a | e_r]
};

std::string to_string(FusionVariant v);
FusionVariant parse_fusion_variant(const std::string& name);

inline constexpr int kModalities = 3;

struct FusionParams {
  // w_v, w_a, w_r as d x 1 columns.
  std::array<ad::Tensor, kModalities> modality_query;
  // Per modality a (d+1) x (rank*d_h) matrix; column block i is w_m^(i).
  std::array<ad::Tensor, kModalities> factors;
  ad::Tensor bias;               // d_h
  ad::Tensor concat_projection;  // 3d x d_h, only for kConcat
  Index rank = 0;
  Index out_dim = 0;

  static FusionParams init(Index d, Index out_dim, Index rank, FusionVariant variant, Rng& rng);
};

// ---------------------------------------------------------------------------
// Single-entity reference kernels.

// Softmax over the three modality logits w_m . tanh(e_m).
Eigen::Vector3d modality_weights(std::span<const Eigen::VectorXd, kModalities> embeddings,
                                 std::span<const Eigen::VectorXd, kModalities> queries);

template <typename D>
Eigen::Matrix<typename D::Scalar, Eigen::Dynamic, 1> weight_and_augment(const Eigen::MatrixBase<D>& e,
                                                                        typename D::Scalar alpha) {
  Eigen::Matrix<typename D::Scalar, Eigen::Dynamic, 1> z(e.size() + 1);
  z.head(e.size()) = alpha * e.reshaped();
  z[e.size()] = typename D::Scalar(1);
  return z;
}

// Counts multiply-adds when `macs` is non-null.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> low_rank_fuse(
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, kModalities> z,
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, kModalities> factors,
    Index rank, std::uint64_t* macs = nullptr) {
  const Index width = factors[0].cols();
  if (rank < 1 || width % rank != 0) throw DimensionError("low_rank_fuse: factor width not divisible by rank");
  const Index out_dim = width / rank;
  for (int m = 0; m < kModalities; ++m) {
    if (factors[m].rows() != z[m].size() || factors[m].cols() != width) {
      throw DimensionError("low_rank_fuse: factor " + std::to_string(m) + " does not fit z of length " +
                           std::to_string(z[m].size()));
    }
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> h = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(out_dim);
  std::uint64_t count = 0;
  for (Index i = 0; i < rank; ++i) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> term = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(out_dim);
    for (int m = 0; m < kModalities; ++m) {
      for (Index k = 0; k < out_dim; ++k) {
        Scalar proj(0);
        for (Index j = 0; j < z[m].size(); ++j) proj += factors[m](j, i * out_dim + k) * z[m][j];
        count += static_cast<std::uint64_t>(z[m].size());
        term[k] *= proj;
        ++count;
      }
    }
    h += term;
    count += static_cast<std::uint64_t>(out_dim);
  }
  if (macs != nullptr) *macs += count;
  return h;
}

// Full tensor fusion oracle: h[k] = sum over (i,j,l) of W[i,j,l,k] Z[i,j,l] + b[k].
// `weight` has shape (d_v+1, d_a+1, d_r+1, d_h). Value-only.
Eigen::VectorXd full_tensor_fuse(std::span<const Eigen::VectorXd, kModalities> z, const ad::Tensor& weight,
                                 const Eigen::VectorXd& bias);

// W = sum_i w_v^(i) (x) w_a^(i) (x) w_r^(i), contracted over the shared d_h axis.
ad::Tensor reconstruct_weight_tensor(std::span<const ad::Matrix, kModalities> factors, Index rank);

// h = P' [e_v; e_a; e_r] + b.
Eigen::VectorXd concat_fuse(std::span<const Eigen::VectorXd, kModalities> embeddings,
                            const Eigen::Ref<const ad::Matrix>& projection, const Eigen::VectorXd& bias);

// ---------------------------------------------------------------------------
// Batched, differentiable path over N entities: embeddings are N x d each.

struct FusionTrace {
  ad::Tensor weights;  // N x 3 modality weights (absent for kConcat)
  ad::Tensor fused;    // N x d_h
};

FusionTrace fuse(std::span<const ad::Tensor, kModalities> embeddings, const FusionParams& params,
                 FusionVariant variant);

}  // namespace mmalign
