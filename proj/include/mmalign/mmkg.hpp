#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mmalign/errors.hpp"

namespace mmalign {

using Index = Eigen::Index;
using MatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Triple {
  Index head = 0;
  Index relation = 0;
  Index tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

// One knowledge graph with its three modality channels.
struct MultiModalKG {
  Index entity_count = 0;
  Index relation_count = 0;
  std::vector<Triple> triples;
  MatrixXd attr_bag;  // entity_count x d_a, entries in {0, 1}
  MatrixXd rel_bag;   // entity_count x d_r, entries in {0, 1}
  MatrixXd visual;    // entity_count x d_v
  std::vector<bool> has_image;

  // Throws ContractError on the first violated invariant.
  void validate() const;
};

struct SeedPair {
  Index left = 0;   // entity in the first graph
  Index right = 0;  // entity in the second graph
  friend bool operator==(const SeedPair&, const SeedPair&) = default;
  friend auto operator<=>(const SeedPair&, const SeedPair&) = default;
};

struct PseudoPair {
  SeedPair pair;
  int epoch = 0;  // epoch at which the pair was promoted
  friend bool operator==(const PseudoPair&, const PseudoPair&) = default;
};

struct AlignmentSeeds {
  std::vector<SeedPair> train;
  std::vector<SeedPair> test;
  std::vector<PseudoPair> pseudo;

  // train/test disjoint on both sides; pseudo pairs never touch a train entity;
  // no entity repeats on one side within train + pseudo.
  void validate() const;
  // train followed by pseudo pairs.
  std::vector<SeedPair> supervision() const;
};

// ---------------------------------------------------------------------------
// Neutral on-disk format

struct Occurrence {
  Index entity = 0;
  std::string item;
  friend bool operator==(const Occurrence&, const Occurrence&) = default;
};

// A graph as stored on disk, before vocabulary selection and missing-image
// filling.
struct RawGraph {
  Index entity_count = 0;
  Index relation_count = 0;
  std::vector<Triple> triples;
  std::vector<Occurrence> attributes;
  std::vector<Occurrence> relations;
  MatrixXf visual;                  // entity_count x d_v
  std::vector<Index> with_image;    // ascending entity ids that have a visual row
  friend bool operator==(const RawGraph&, const RawGraph&) = default;
};

struct RawDataset {
  RawGraph first;
  RawGraph second;
  std::vector<SeedPair> seeds;
  friend bool operator==(const RawDataset&, const RawDataset&) = default;
};

// Binary matrix file: "MMEAF32\0", u64 rows, u64 cols, rows*cols f32, all
// little-endian, row-major.
void write_f32_matrix(const std::filesystem::path& path, const MatrixXf& m);
MatrixXf read_f32_matrix(const std::filesystem::path& path);

void write_raw_dataset(const RawDataset& data, const std::filesystem::path& dir);
RawDataset read_raw_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

// item -> column. The K most frequent items over every list given, ties
// broken by first occurrence.
using Vocabulary = std::map<std::string, Index>;
Vocabulary topk_vocabulary(std::span<const std::span<const Occurrence>> lists, Index k);

AlignmentSeeds split_seeds(std::span<const SeedPair> pairs, double train_ratio,
                           std::uint64_t seed);

struct LoadOptions {
  Index top_k = 1000;
  double train_ratio = 0.2;
  std::uint64_t split_seed = 0;
  std::uint64_t missing_image_seed = 0;
};

struct LoadedDataset {
  MultiModalKG first;
  MultiModalKG second;
  AlignmentSeeds seeds;
  std::vector<SeedPair> all_pairs;
  Vocabulary attribute_vocab;
  Vocabulary relation_vocab;
};

// Builds model-ready graphs: bag matrices restricted to a joint top-K
// vocabulary (d_a = d_r = K) and seeded random rows for missing images.
LoadedDataset build_dataset(const RawDataset& raw, const LoadOptions& options);
LoadedDataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options);

// ---------------------------------------------------------------------------
// Synthetic MMKG pairs

struct SyntheticConfig {
  Index entity_count = 200;
  Index relation_count = 20;
  double mean_degree = 6.0;
  double edge_drop_prob = 0.1;
  double noise_std = 0.1;
  Index attribute_vocab = 100;
  Index visual_dim = 32;
  double missing_image_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr Index kSyntheticLatentDim = 32;

// Second graph is an entity-permuted, independently edge-dropped copy of the
// first; the ground-truth alignment is the permutation.
RawDataset generate_synthetic_raw(const SyntheticConfig& cfg);
LoadedDataset generate_synthetic(const SyntheticConfig& cfg, const LoadOptions& options);

}  // namespace mmalign
