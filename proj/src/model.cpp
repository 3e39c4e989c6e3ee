#include "mmalign/model.hpp"

namespace mmalign {

namespace {

enum InitStream : std::uint64_t { kEncoderInit = 100, kFusionInit, kAggregatorInit };

GraphInputs graph_inputs(const MultiModalKG& kg, Index forward_offset, Index inverse_offset, Index self_loop) {
  GraphInputs in;
  in.visual = ad::Tensor::matrix(kg.visual);
  in.attribute_bag = ad::Tensor::matrix(kg.attr_bag);
  in.relation_bag = ad::Tensor::matrix(kg.rel_bag);
  in.edges = RelationalGraph::build(kg, forward_offset, inverse_offset, self_loop);
  return in;
}

}  // namespace

void ModelDims::validate() const {
  if (embedding < 1 || visual < 1 || attribute < 1 || relation_bag < 1 || fused < 1 || graph < 1) {
    throw ContractError("model dimensions must be positive");
  }
  if (rank < 1 || rank > 16) throw ContractError("fusion rank must lie in 1..16");
  if (layers < 0) throw ContractError("layer count must be non-negative");
  if (fused != graph) {
    throw ContractError("fused width " + std::to_string(fused) + " must equal graph width " + std::to_string(graph));
  }
}

ModelInputs ModelInputs::build(const MultiModalKG& first, const MultiModalKG& second) {
  const Index r1 = first.relation_count;
  const Index r2 = second.relation_count;
  ModelInputs in;
  in.relation_table_size = 2 * r1 + 2 * r2 + 1;
  const Index self_loop = in.relation_table_size - 1;
  in.first = graph_inputs(first, 0, r1, self_loop);
  in.second = graph_inputs(second, 2 * r1, 2 * r1 + r2, self_loop);
  return in;
}

ModelParams ModelParams::init(const ModelDims& dims, FusionVariant variant, Index relation_table_size,
                              std::uint64_t seed) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  p.variant = variant;
  Rng enc = make_rng(seed, kEncoderInit);
  p.encoders = EncoderParams::init(dims.embedding, dims.visual, dims.attribute, dims.relation_bag, enc);
  Rng fus = make_rng(seed, kFusionInit);
  p.fusion = FusionParams::init(dims.embedding, dims.fused, dims.rank, variant, fus);
  Rng agg = make_rng(seed, kAggregatorInit);
  p.aggregator = AggregatorParams::init(relation_table_size, dims.graph, dims.layers, agg);
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  static constexpr const char* kModality[kModalities] = {"visual", "attribute", "relation"};
  std::vector<NamedTensor> out{
      {"encoder.visual.weight", encoders.visual_weight},
      {"encoder.visual.bias", encoders.visual_bias},
      {"encoder.attribute.weight", encoders.attribute_weight},
      {"encoder.attribute.bias", encoders.attribute_bias},
      {"encoder.relation.weight", encoders.relation_weight},
      {"encoder.relation.bias", encoders.relation_bias},
  };
  if (variant == FusionVariant::kConcat) {
    out.push_back({"fusion.concat_projection", fusion.concat_projection});
  } else {
    for (int m = 0; m < kModalities; ++m) {
      out.push_back({std::string("fusion.query.") + kModality[m], fusion.modality_query[m]});
    }
    for (int m = 0; m < kModalities; ++m) {
      out.push_back({std::string("fusion.factors.") + kModality[m], fusion.factors[m]});
    }
  }
  out.push_back({"fusion.bias", fusion.bias});
  out.push_back({"aggregator.relations", aggregator.relations});
  out.push_back({"aggregator.query", aggregator.query});
  return out;
}

Index ModelParams::parameter_count() const {
  Index total = 0;
  for (const auto& p : named()) total += p.tensor.numel();
  return total;
}

ad::Tensor forward(const ModelParams& params, const GraphInputs& inputs) {
  const std::array<ad::Tensor, kModalities> embeddings{
      encode_rows(inputs.visual, params.encoders.visual_weight, params.encoders.visual_bias),
      encode_rows(inputs.attribute_bag, params.encoders.attribute_weight, params.encoders.attribute_bias),
      encode_rows(inputs.relation_bag, params.encoders.relation_weight, params.encoders.relation_bias),
  };
  const FusionTrace fused = fuse(embeddings, params.fusion, params.variant);
  const std::vector<ad::Tensor> layers = aggregate(fused.fused, inputs.edges, params.aggregator);
  return stack_layers(layers);
}

}  // namespace mmalign
