#include "mmalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace mmalign {

namespace {

enum TrainStream : std::uint64_t { kModelInit = 1, kBatchOrder = 2 };

using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// k distinct picks from `pool` by a partial Fisher-Yates shuffle.
std::vector<Index> choose(std::vector<Index> pool, Index k, Rng& rng) {
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (negatives < 0) throw ContractError("negatives per positive must be non-negative (0 selects batch size - 1)");
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (weight_decay < 0.0) throw ContractError("weight decay must be non-negative");
  if (expand_every < 0 || eval_every < 0) throw ContractError("periods must be non-negative");
}

std::vector<std::vector<Index>> sample_negatives(std::span<const Index> positives, Index pool_size, Index k,
                                                 Rng& rng) {
  if (k < 1) throw ContractError("sample_negatives: K must be at least 1");
  const Index batch = static_cast<Index>(positives.size());
  std::vector<std::vector<Index>> out(positives.size());
  if (batch > k) {
    for (Index i = 0; i < batch; ++i) {
      std::vector<Index> others;
      others.reserve(batch - 1);
      for (Index j = 0; j < batch; ++j) {
        if (j != i) others.push_back(positives[j]);
      }
      out[i] = k == batch - 1 ? std::move(others) : choose(std::move(others), k, rng);
    }
    return out;
  }
  if (pool_size <= k) {
    throw ContractError("sample_negatives: pool of " + std::to_string(pool_size) + " cannot supply " +
                        std::to_string(k) + " negatives");
  }
  for (Index i = 0; i < batch; ++i) {
    if (positives[i] < 0 || positives[i] >= pool_size) throw ContractError("sample_negatives: positive outside pool");
    std::vector<Index> others;
    others.reserve(pool_size - 1);
    for (Index e = 0; e < pool_size; ++e) {
      if (e != positives[i]) others.push_back(e);
    }
    out[i] = choose(std::move(others), k, rng);
  }
  return out;
}

NegativeSet sample_negative_set(std::span<const SeedPair> batch, Index first_pool, Index second_pool, Index k,
                                Rng& rng) {
  std::vector<Index> left, right;
  for (const auto& p : batch) {
    left.push_back(p.left);
    right.push_back(p.right);
  }
  NegativeSet set;
  set.forward = sample_negatives(right, second_pool, k, rng);
  set.backward = sample_negatives(left, first_pool, k, rng);
  return set;
}

ad::Tensor directed_contrastive_loss(const ad::Tensor& sources, const ad::Tensor& targets,
                                     std::span<const Index> source_rows, std::span<const Index> positive_rows,
                                     const std::vector<std::vector<Index>>& negatives, double tau) {
  if (source_rows.empty()) throw ContractError("contrastive_loss: empty batch");
  if (!(tau > 0.0)) throw ContractError("contrastive_loss: temperature must be positive");
  const Index batch = static_cast<Index>(source_rows.size());
  if (static_cast<Index>(positive_rows.size()) != batch || static_cast<Index>(negatives.size()) != batch) {
    throw DimensionError("contrastive_loss: sources, positives and negatives differ in length");
  }
  const Index k = static_cast<Index>(negatives[0].size());

  // Gather every candidate row once; logits are computed against that set.
  std::vector<Index> candidates;
  std::unordered_map<Index, Index> slot;
  auto slot_of = [&](Index row) {
    auto [it, inserted] = slot.try_emplace(row, static_cast<Index>(candidates.size()));
    if (inserted) candidates.push_back(row);
    return it->second;
  };
  IndexMatrix columns(batch, k + 1);
  for (Index i = 0; i < batch; ++i) {
    if (static_cast<Index>(negatives[i].size()) != k) throw DimensionError("contrastive_loss: ragged negatives");
    columns(i, 0) = slot_of(positive_rows[i]);
    for (Index c = 0; c < k; ++c) columns(i, c + 1) = slot_of(negatives[i][c]);
  }

  const ad::Tensor src = ad::normalize_rows(ad::gather_rows(sources, source_rows));
  const ad::Tensor cand = ad::normalize_rows(ad::gather_rows(targets, candidates));
  const ad::Tensor logits = ad::scale(ad::matmul(src, ad::transpose(cand)), 1.0 / tau);
  const ad::Tensor picked = ad::take_along_rows(logits, columns);
  return ad::mean(ad::sub(ad::row_logsumexp(picked), ad::column(picked, 0)));
}

ad::Tensor contrastive_loss(const ad::Tensor& first, const ad::Tensor& second, std::span<const SeedPair> batch,
                            const NegativeSet& negatives, double tau) {
  if (batch.empty()) throw ContractError("contrastive_loss: empty batch");
  std::vector<Index> left, right;
  for (const auto& p : batch) {
    left.push_back(p.left);
    right.push_back(p.right);
  }
  const ad::Tensor fwd = directed_contrastive_loss(first, second, left, right, negatives.forward, tau);
  const ad::Tensor bwd = directed_contrastive_loss(second, first, right, left, negatives.backward, tau);
  return ad::scale(ad::add(fwd, bwd), 0.5);
}

OptimizerState OptimizerState::zeros_like(std::span<const NamedTensor> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.first_moment.push_back(ad::Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    s.second_moment.push_back(ad::Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
  return s;
}

void adamw_step(std::span<const NamedTensor> params, OptimizerState& state, const AdamWConfig& cfg) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state does not match parameter list");
  }
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) throw ContractError("adamw_step: " + p.name + " is not a parameter");
    if (!p.tensor.grad().allFinite()) throw TrainingError("non-finite gradient in " + p.name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor tensor = params[i].tensor;
    const ad::Matrix& g = tensor.grad();
    ad::Matrix& m = state.first_moment[i];
    ad::Matrix& v = state.second_moment[i];
    if (m.rows() != g.rows() || m.cols() != g.cols()) {
      throw DimensionError("adamw_step: moment shape mismatch for " + params[i].name);
    }
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    ad::Matrix& p = tensor.mutable_value();
    p *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    p.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
}

AlignmentSeeds expand_seeds_iteratively(const Eigen::Ref<const MatrixXd>& first,
                                        const Eigen::Ref<const MatrixXd>& second, const AlignmentSeeds& seeds,
                                        double threshold, int epoch) {
  AlignmentSeeds out = seeds;
  out.pseudo.clear();

  std::vector<char> used_left(first.rows(), 0), used_right(second.rows(), 0);
  for (const auto& p : seeds.train) {
    used_left[p.left] = 1;
    used_right[p.right] = 1;
  }
  std::vector<Index> free_left, free_right;
  for (Index i = 0; i < first.rows(); ++i) {
    if (!used_left[i]) free_left.push_back(i);
  }
  for (Index j = 0; j < second.rows(); ++j) {
    if (!used_right[j]) free_right.push_back(j);
  }
  if (free_left.empty() || free_right.empty()) return out;

  MatrixXd a(free_left.size(), first.cols()), b(free_right.size(), second.cols());
  for (std::size_t i = 0; i < free_left.size(); ++i) a.row(i) = first.row(free_left[i]).normalized();
  for (std::size_t j = 0; j < free_right.size(); ++j) b.row(j) = second.row(free_right[j]).normalized();
  const MatrixXd sim = a * b.transpose();

  std::vector<Index> best_col(sim.rows()), best_row(sim.cols());
  for (Index i = 0; i < sim.rows(); ++i) sim.row(i).maxCoeff(&best_col[i]);
  for (Index j = 0; j < sim.cols(); ++j) sim.col(j).maxCoeff(&best_row[j]);
  for (Index i = 0; i < sim.rows(); ++i) {
    const Index j = best_col[i];
    if (best_row[j] == i && sim(i, j) >= threshold) {
      out.pseudo.push_back({{free_left[i], free_right[j]}, epoch});
    }
  }
  return out;
}

ModelDims fit_dims(const LoadedDataset& data, ModelDims dims) {
  const auto& a = data.first;
  const auto& b = data.second;
  if (a.visual.cols() != b.visual.cols() || a.attr_bag.cols() != b.attr_bag.cols() ||
      a.rel_bag.cols() != b.rel_bag.cols()) {
    throw DimensionError("the two graphs disagree on feature widths");
  }
  dims.visual = a.visual.cols();
  dims.attribute = a.attr_bag.cols();
  dims.relation_bag = a.rel_bag.cols();
  return dims;
}

Embeddings embed(const ModelParams& params, const ModelInputs& inputs) {
  return {forward(params, inputs.first).value(), forward(params, inputs.second).value()};
}

TrainResult train(const LoadedDataset& data, const ModelDims& dims, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  data.seeds.validate();
  if (data.seeds.train.empty()) throw ContractError("train: no training seeds");

  const ModelInputs inputs = ModelInputs::build(data.first, data.second);
  TrainResult result;
  result.params = ModelParams::init(fit_dims(data, dims), cfg.variant, inputs.relation_table_size,
                                    mix_seed(cfg.seed, kModelInit));
  result.relation_table_size = inputs.relation_table_size;
  result.seeds = data.seeds;

  const std::vector<NamedTensor> params = result.params.named();
  OptimizerState state = OptimizerState::zeros_like(params);
  const AdamWConfig opt{cfg.learning_rate, cfg.weight_decay};
  Rng rng = make_rng(cfg.seed, kBatchOrder);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SeedPair> pairs = result.seeds.supervision();
    std::shuffle(pairs.begin(), pairs.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const SeedPair> batch(pairs.data() + begin, end - begin);
      const Index k = cfg.negatives > 0 ? cfg.negatives : std::max<Index>(1, static_cast<Index>(batch.size()) - 1);
      const NegativeSet negatives =
          sample_negative_set(batch, data.first.entity_count, data.second.entity_count, k, rng);

      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      const ad::Tensor g1 = forward(result.params, inputs.first);
      const ad::Tensor g2 = forward(result.params, inputs.second);
      const ad::Tensor loss = contrastive_loss(g1, g2, batch, negatives, cfg.temperature);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("loss diverged to " + std::to_string(loss.item()) + " at epoch " + std::to_string(epoch));
      }
      ad::backward(loss);
      adamw_step(params, state, opt);
      for (const auto& p : params) ad::Tensor(p.tensor).zero_grad();
      loss_sum += loss.item() * static_cast<double>(batch.size());
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(pairs.size());
    log.supervision = static_cast<Index>(pairs.size());

    const bool expand = cfg.expand_every > 0 && epoch % cfg.expand_every == 0 && epoch < cfg.epochs;
    const bool report = cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !data.seeds.test.empty();
    if (expand || report) {
      const Embeddings e = embed(result.params, inputs);
      if (expand) {
        result.seeds = expand_seeds_iteratively(e.first, e.second, result.seeds, cfg.expand_threshold, epoch);
      }
      if (report) log.eval = evaluate(e.first, e.second, data.seeds.test);
    }
    log.pseudo = static_cast<Index>(result.seeds.pseudo.size());
    result.trace.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace mmalign
