#include "mmalign/aggregation.hpp"

namespace mmalign {

Eigen::VectorXd relation_attention(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const Eigen::Ref<const ad::Matrix>& edge_relations) {
  if (edge_relations.rows() == 0) throw ContractError("relation_attention: empty neighborhood");
  if (edge_relations.cols() != query.size()) throw DimensionError("relation_attention: query length mismatch");
  const Eigen::VectorXd logits = edge_relations * query;
  const Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
  return w / w.sum();
}

RelationalGraph RelationalGraph::build(const MultiModalKG& kg, Index forward_offset, Index inverse_offset,
                                       Index self_loop) {
  RelationalGraph g;
  g.entity_count = kg.entity_count;
  const std::size_t edges = 2 * kg.triples.size() + static_cast<std::size_t>(kg.entity_count);
  g.source.reserve(edges);
  g.target.reserve(edges);
  g.relation.reserve(edges);
  auto push = [&g](Index from, Index to, Index rel) {
    g.source.push_back(from);
    g.target.push_back(to);
    g.relation.push_back(rel);
  };
  for (const auto& t : kg.triples) {
    push(t.tail, t.head, forward_offset + t.relation);
    push(t.head, t.tail, inverse_offset + t.relation);
  }
  for (Index e = 0; e < kg.entity_count; ++e) push(e, e, self_loop);
  return g;
}

AggregatorParams AggregatorParams::init(Index relation_count, Index dim, Index layers, Rng& rng) {
  if (layers < 0) throw ContractError("layer count must be non-negative");
  AggregatorParams p;
  std::normal_distribution<double> normal(0.0, 1.0);
  ad::Matrix rel(relation_count, dim);
  for (Index i = 0; i < rel.size(); ++i) rel.data()[i] = normal(rng);
  p.relations = ad::Tensor::parameter(rel);
  p.query = ad::Tensor::parameter(glorot_uniform(dim, 1, rng));
  p.layers = layers;
  return p;
}

ad::Tensor rrgat_layer(const ad::Tensor& hidden, const RelationalGraph& graph, const ad::Tensor& unit_relations,
                       const ad::Tensor& query) {
  if (hidden.rows() != graph.entity_count) {
    throw DimensionError("rrgat_layer: " + std::to_string(hidden.rows()) + " rows for " +
                         std::to_string(graph.entity_count) + " entities");
  }
  const ad::Tensor neighbors = ad::gather_rows(hidden, graph.source);
  const ad::Tensor edge_rel = ad::gather_rows(unit_relations, graph.relation);
  const ad::Tensor reflected = ad::reflect_rows(neighbors, edge_rel);

  const ad::Tensor relation_logits = ad::matmul(unit_relations, query);
  const ad::Tensor edge_logits = ad::gather_rows(relation_logits, graph.relation);
  const ad::Tensor attention = ad::segment_softmax(edge_logits, graph.target, graph.entity_count);

  const ad::Tensor messages = ad::scale_rows(reflected, attention);
  return ad::tanh(ad::scatter_add_rows(messages, graph.target, graph.entity_count));
}

std::vector<ad::Tensor> aggregate(const ad::Tensor& initial, const RelationalGraph& graph,
                                  const AggregatorParams& params) {
  std::vector<ad::Tensor> layers{initial};
  if (params.layers == 0) return layers;
  const ad::Tensor unit_relations = ad::normalize_rows(params.relations);
  for (Index l = 0; l < params.layers; ++l) {
    layers.push_back(rrgat_layer(layers.back(), graph, unit_relations, params.query));
  }
  return layers;
}

ad::Tensor stack_layers(std::span<const ad::Tensor> layers) {
  if (layers.empty()) throw ContractError("stack_layers: no layers");
  if (layers.size() == 1) return layers[0];
  return ad::concat(layers, 1);
}

}  // namespace mmalign
