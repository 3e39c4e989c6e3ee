#include "mmalign/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include <fmt/format.h>

namespace mmalign {

namespace {

template <typename Body>
void parallel_rows(Index rows, int threads, Body body) {
  const Index workers = std::clamp<Index>(threads, 1, std::max<Index>(rows, 1));
  if (workers == 1) {
    body(0, rows);
    return;
  }
  std::vector<std::thread> pool;
  const Index chunk = (rows + workers - 1) / workers;
  for (Index begin = 0; begin < rows; begin += chunk) {
    pool.emplace_back(body, begin, std::min(rows, begin + chunk));
  }
  for (auto& t : pool) t.join();
}

MatrixXd unit_rows(const MatrixXd& m) {
  MatrixXd out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (!(n > 0.0)) throw NumericError("rank_all: zero embedding row " + std::to_string(i));
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

std::vector<Index> ranks_from_similarity(const Eigen::Ref<const MatrixXd>& similarity,
                                         std::span<const Index> gold_column, TieMode ties, int threads) {
  if (static_cast<Index>(gold_column.size()) != similarity.rows()) {
    throw DimensionError("ranks_from_similarity: one gold column per row required");
  }
  for (Index g : gold_column) {
    if (g < 0 || g >= similarity.cols()) throw ContractError("ranks_from_similarity: gold column out of range");
  }
  std::vector<Index> ranks(gold_column.size());
  parallel_rows(similarity.rows(), threads, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const Index g = gold_column[i];
      const double gold = similarity(i, g);
      Index above = 0;
      for (Index j = 0; j < similarity.cols(); ++j) {
        if (j == g) continue;
        const double s = similarity(i, j);
        if (s > gold || (ties == TieMode::kPessimistic && s == gold)) ++above;
      }
      ranks[i] = 1 + above;
    }
  });
  return ranks;
}

DirectionRanks rank_all(const Eigen::Ref<const MatrixXd>& first, const Eigen::Ref<const MatrixXd>& second,
                        std::span<const SeedPair> test, const RankOptions& options) {
  if (test.empty()) throw ContractError("rank_all: empty test set");
  if (first.cols() != second.cols()) throw DimensionError("rank_all: embedding widths differ");
  const MatrixXd a = unit_rows(first);
  const MatrixXd b = unit_rows(second);
  const Index n = static_cast<Index>(test.size());

  std::vector<Index> left(n), right(n);
  MatrixXd qa(n, a.cols()), qb(n, b.cols());
  for (Index i = 0; i < n; ++i) {
    left[i] = test[i].left;
    right[i] = test[i].right;
    if (left[i] < 0 || left[i] >= a.rows() || right[i] < 0 || right[i] >= b.rows()) {
      throw ContractError("rank_all: test pair " + std::to_string(i) + " names an unknown entity");
    }
    qa.row(i) = a.row(left[i]);
    qb.row(i) = b.row(right[i]);
  }

  DirectionRanks out;
  if (options.pool == CandidatePool::kTestSide) {
    const MatrixXd sim = qa * qb.transpose();
    std::vector<Index> diag(n);
    for (Index i = 0; i < n; ++i) diag[i] = i;
    out.forward = ranks_from_similarity(sim, diag, options.ties, options.threads);
    const MatrixXd sim_t = sim.transpose();
    out.backward = ranks_from_similarity(sim_t, diag, options.ties, options.threads);
    out.candidates = n;
  } else {
    const MatrixXd fwd = qa * b.transpose();
    const MatrixXd bwd = qb * a.transpose();
    out.forward = ranks_from_similarity(fwd, right, options.ties, options.threads);
    out.backward = ranks_from_similarity(bwd, left, options.ties, options.threads);
    out.candidates = std::min(a.rows(), b.rows());
  }
  return out;
}

double hits_at(std::span<const Index> ranks, Index n) {
  if (ranks.empty()) return 0.0;
  const auto hit = std::count_if(ranks.begin(), ranks.end(), [n](Index r) { return r <= n; });
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double mrr(std::span<const Index> ranks) {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (Index r : ranks) total += 1.0 / static_cast<double>(r);
  return total / static_cast<double>(ranks.size());
}

DirectionMetrics metrics_from_ranks(std::span<const Index> ranks) {
  return {hits_at(ranks, 1), hits_at(ranks, 10), mrr(ranks)};
}

EvalReport evaluate(const Eigen::Ref<const MatrixXd>& first, const Eigen::Ref<const MatrixXd>& second,
                    std::span<const SeedPair> test, const RankOptions& options) {
  const DirectionRanks r = rank_all(first, second, test, options);
  EvalReport rep;
  rep.forward = metrics_from_ranks(r.forward);
  rep.backward = metrics_from_ranks(r.backward);
  rep.mean = {0.5 * (rep.forward.hits1 + rep.backward.hits1), 0.5 * (rep.forward.hits10 + rep.backward.hits10),
              0.5 * (rep.forward.mrr + rep.backward.mrr)};
  rep.candidates = r.candidates;
  rep.test_pairs = static_cast<Index>(test.size());
  return rep;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  auto line = [&out](const char* dir, const DirectionMetrics& m) {
    out += fmt::format("{}.hits1={:.6f}\n{}.hits10={:.6f}\n{}.mrr={:.6f}\n", dir, m.hits1, dir, m.hits10, dir, m.mrr);
  };
  line("forward", r.forward);
  line("backward", r.backward);
  line("mean", r.mean);
  out += fmt::format("candidates={}\ntest_pairs={}\n", r.candidates, r.test_pairs);
  return out;
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(dir / "report.txt");
  txt << format_report(r);
  std::ofstream tsv(dir / "report.tsv");
  tsv << "direction\thits1\thits10\tmrr\n";
  auto row = [&tsv](const char* dir_name, const DirectionMetrics& m) {
    tsv << fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}\n", dir_name, m.hits1, m.hits10, m.mrr);
  };
  row("forward", r.forward);
  row("backward", r.backward);
  row("mean", r.mean);
  if (!txt || !tsv) throw Error("cannot write report under " + dir.string());
}

}  // namespace mmalign
