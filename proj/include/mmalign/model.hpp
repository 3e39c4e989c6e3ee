#pragma once

#include <string>
#include <vector>

#include "mmalign/aggregation.hpp"
#include "mmalign/autodiff.hpp"
#include "mmalign/encoders.hpp"
#include "mmalign/fusion.hpp"
#include "mmalign/mmkg.hpp"

namespace mmalign {

struct ModelDims {
  Index embedding = 100;     // d, per-modality embedding width
  Index visual = 4096;       // d_v
  Index attribute = 1000;    // d_a
  Index relation_bag = 1000; // d_r
  Index fused = 300;         // d_h
  Index graph = 300;         // d_g
  Index rank = 4;            // R
  Index layers = 3;          // L

  // The fused embedding seeds the first graph layer, so d_h must equal d_g.
  void validate() const;
  Index stacked_width() const { return (layers + 1) * graph; }
};

// Model inputs for one graph: constant feature matrices plus message edges.
struct GraphInputs {
  ad::Tensor visual;
  ad::Tensor attribute_bag;
  ad::Tensor relation_bag;
  RelationalGraph edges;
};

// Both graphs share one relation table laid out as
// [first forward | first inverse | second forward | second inverse | self-loop].
struct ModelInputs {
  GraphInputs first;
  GraphInputs second;
  Index relation_table_size = 0;

  static ModelInputs build(const MultiModalKG& first, const MultiModalKG& second);
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct ModelParams {
  ModelDims dims;
  FusionVariant variant = FusionVariant::kFull;
  EncoderParams encoders;
  FusionParams fusion;
  AggregatorParams aggregator;

  static ModelParams init(const ModelDims& dims, FusionVariant variant, Index relation_table_size,
                          std::uint64_t seed);

  // Every learnable tensor of this variant under a stable name. The handles
  // share storage with the model.
  std::vector<NamedTensor> named() const;
  Index parameter_count() const;
};

// Encode, fuse, aggregate and stack: N x (L+1)*d_g embeddings for one graph.
ad::Tensor forward(const ModelParams& params, const GraphInputs& inputs);

}  // namespace mmalign
