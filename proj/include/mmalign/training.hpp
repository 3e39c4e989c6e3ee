#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/evaluation.hpp"
#include "mmalign/mmkg.hpp"
#include "mmalign/model.hpp"
#include "mmalign/random.hpp"

namespace mmalign {

struct TrainConfig {
  double temperature = 0.1;
  Index negatives = 0;  // per positive; 0 means batch size - 1
  double learning_rate = 5e-3;
  double weight_decay = 1e-2;
  int epochs = 600;
  Index batch_size = 3500;
  int expand_every = 20;  // 0 disables pseudo-seed expansion
  double expand_threshold = 0.85;
  int eval_every = 0;     // 0 disables periodic test metrics
  std::uint64_t seed = 0;
  FusionVariant variant = FusionVariant::kFull;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Contrastive loss

// For each positive, K distinct candidates other than positives[i]. Drawn from
// the other positives of the batch when the batch holds more than K of them,
// otherwise from [0, pool_size).
std::vector<std::vector<Index>> sample_negatives(std::span<const Index> positives, Index pool_size, Index k,
                                                 Rng& rng);

struct NegativeSet {
  std::vector<std::vector<Index>> forward;   // entities of the second graph
  std::vector<std::vector<Index>> backward;  // entities of the first graph
};

NegativeSet sample_negative_set(std::span<const SeedPair> batch, Index first_pool, Index second_pool, Index k,
                                Rng& rng);

// One direction: mean over i of
//   logsumexp_c(cos(s_i, c) / tau) - cos(s_i, t_i) / tau
// over c in {t_i} + negatives[i]. Rows are normalized inside, so the loss
// ignores the scale of either embedding matrix.
ad::Tensor directed_contrastive_loss(const ad::Tensor& sources, const ad::Tensor& targets,
                                     std::span<const Index> source_rows, std::span<const Index> positive_rows,
                                     const std::vector<std::vector<Index>>& negatives, double tau);

// Average of the first->second and second->first directions.
ad::Tensor contrastive_loss(const ad::Tensor& first, const ad::Tensor& second, std::span<const SeedPair> batch,
                            const NegativeSet& negatives, double tau);

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay

struct AdamWConfig {
  double learning_rate = 5e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<ad::Matrix> first_moment;
  std::vector<ad::Matrix> second_moment;
  std::int64_t step = 0;

  static OptimizerState zeros_like(std::span<const NamedTensor> params);
};

// p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps), from the gradients held
// by each tensor. Checks every gradient before touching any parameter.
void adamw_step(std::span<const NamedTensor> params, OptimizerState& state, const AdamWConfig& cfg);

// ---------------------------------------------------------------------------
// Pseudo-seed expansion

// Replaces seeds.pseudo with every (i, j) of entities outside the train pairs
// that are mutual nearest neighbours by cosine with similarity >= threshold.
AlignmentSeeds expand_seeds_iteratively(const Eigen::Ref<const MatrixXd>& first,
                                        const Eigen::Ref<const MatrixXd>& second, const AlignmentSeeds& seeds,
                                        double threshold, int epoch);

// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  Index supervision = 0;
  Index pseudo = 0;
  std::optional<EvalReport> eval;
};

struct TrainResult {
  ModelParams params;
  Index relation_table_size = 0;
  std::vector<EpochLog> trace;
  AlignmentSeeds seeds;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Fills the data-dependent widths (d_v, d_a, d_r) of `dims` from the graphs.
ModelDims fit_dims(const LoadedDataset& data, ModelDims dims);

struct Embeddings {
  MatrixXd first;
  MatrixXd second;
};

Embeddings embed(const ModelParams& params, const ModelInputs& inputs);

TrainResult train(const LoadedDataset& data, const ModelDims& dims, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace mmalign
