#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmalign/mmkg.hpp"

namespace mmalign {

enum class TieMode { kOptimistic, kPessimistic };
enum class CandidatePool { kTestSide, kAllEntities };

struct RankOptions {
  TieMode ties = TieMode::kOptimistic;
  CandidatePool pool = CandidatePool::kTestSide;
  int threads = 1;
};

// rank = 1 + #candidates scoring strictly above the gold one (optimistic), or
// + #candidates scoring at least as high (pessimistic).
std::vector<Index> ranks_from_similarity(const Eigen::Ref<const MatrixXd>& similarity,
                                         std::span<const Index> gold_column, TieMode ties = TieMode::kOptimistic,
                                         int threads = 1);

struct DirectionRanks {
  std::vector<Index> forward;   // first -> second
  std::vector<Index> backward;  // second -> first
  Index candidates = 0;
};

// Rows are L2-normalized here, so cosine similarity is a dot product.
DirectionRanks rank_all(const Eigen::Ref<const MatrixXd>& first, const Eigen::Ref<const MatrixXd>& second,
                        std::span<const SeedPair> test, const RankOptions& options = {});

double hits_at(std::span<const Index> ranks, Index n);
double mrr(std::span<const Index> ranks);

struct DirectionMetrics {
  double hits1 = 0.0;
  double hits10 = 0.0;
  double mrr = 0.0;
  friend bool operator==(const DirectionMetrics&, const DirectionMetrics&) = default;
};

DirectionMetrics metrics_from_ranks(std::span<const Index> ranks);

struct EvalReport {
  DirectionMetrics forward;
  DirectionMetrics backward;
  DirectionMetrics mean;
  Index candidates = 0;
  Index test_pairs = 0;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport evaluate(const Eigen::Ref<const MatrixXd>& first, const Eigen::Ref<const MatrixXd>& second,
                    std::span<const SeedPair> test, const RankOptions& options = {});

std::string format_report(const EvalReport& report);
// report.txt (key=value lines) and report.tsv (one row per direction plus mean).
void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace mmalign
