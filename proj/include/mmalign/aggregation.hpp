#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "mmalign/autodiff.hpp"
#include "mmalign/mmkg.hpp"
#include "mmalign/random.hpp"

// Relational-reflection graph attention.
//
// Every relation r owns a vector h_r, used only through its unit
// normalization. The relation acts on neighbor embeddings as the Householder
// reflection M_r = I - 2 h_r h_r', applied as a rank-1 update and never
// materialized inside the model. M_r is orthogonal, so it preserves norms and
// pairwise distances.

namespace mmalign {

// Dense M_r for a raw (unnormalized) relation vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> reflection_matrix(
    const Eigen::MatrixBase<Derived>& raw) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = raw.norm();
  if (!(norm > Scalar(0))) throw NumericError("reflection_matrix: zero-norm relation vector");
  const auto h = (raw.reshaped() / norm).eval();
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  return Dense::Identity(h.size(), h.size()) - Scalar(2) * h * h.transpose();
}

// M_r x = x - 2 (h_r . x) h_r for a unit h_r.
template <typename DH, typename DX>
Eigen::Matrix<typename DX::Scalar, Eigen::Dynamic, 1> reflect(const Eigen::MatrixBase<DH>& unit_relation,
                                                             const Eigen::MatrixBase<DX>& x) {
  const auto h = unit_relation.reshaped();
  return x.reshaped() - typename DX::Scalar(2) * h.dot(x.reshaped()) * h;
}

// Attention over a neighbor multiset: phi_e = softmax_e(q . h_{r_e}). Each row
// of `edge_relations` is the unit relation vector of one incident edge.
Eigen::VectorXd relation_attention(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const Eigen::Ref<const ad::Matrix>& edge_relations);

// Message edges of one graph: entity `target[e]` receives from `source[e]`
// through relation `relation[e]` (an index into the shared relation table).
struct RelationalGraph {
  Index entity_count = 0;
  std::vector<Index> source;
  std::vector<Index> target;
  std::vector<Index> relation;

  std::size_t edge_count() const { return source.size(); }

  // For each triple (h, r, t): h receives t via forward_offset + r, and t
  // receives h via inverse_offset + r. Every entity receives itself via
  // self_loop, so no neighborhood is empty.
  static RelationalGraph build(const MultiModalKG& kg, Index forward_offset, Index inverse_offset,
                               Index self_loop);
};

struct AggregatorParams {
  ad::Tensor relations;  // |R| x d_g raw relation vectors
  ad::Tensor query;      // d_g x 1
  Index layers = 0;

  static AggregatorParams init(Index relation_count, Index dim, Index layers, Rng& rng);
};

// h_i' = tanh(sum over incoming edges e of phi_e M_{r_e} h_{source(e)}), with
// phi normalized over the edges of each target entity.
ad::Tensor rrgat_layer(const ad::Tensor& hidden, const RelationalGraph& graph, const ad::Tensor& unit_relations,
                       const ad::Tensor& query);

// [H0, H1, ..., HL] for L = params.layers.
std::vector<ad::Tensor> aggregate(const ad::Tensor& initial, const RelationalGraph& graph,
                                  const AggregatorParams& params);

// Per-entity concatenation g_i = [h_i^0 | h_i^1 | ... | h_i^L].
ad::Tensor stack_layers(std::span<const ad::Tensor> layers);

}  // namespace mmalign
