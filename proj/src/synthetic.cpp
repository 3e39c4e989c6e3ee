#include <algorithm>
#include <numeric>

#include "mmalign/mmkg.hpp"
#include "mmalign/random.hpp"

namespace mmalign {

namespace {

// Bag items switch on when the noisy projection clears this level (about one
// item in six for a unit-variance projection).
constexpr double kBagThreshold = 1.0;

enum Stream : std::uint64_t {
  kLatent = 10,
  kStructure,
  kPermutation,
  kProjection,
  kDropFirst,
  kDropSecond,
  kFeaturesFirst,
  kFeaturesSecond,
};

MatrixXd gaussian(Rng& rng, Index rows, Index cols, double std) {
  std::normal_distribution<double> normal(0.0, std);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

struct Projections {
  MatrixXd visual;     // d_v x latent; identity when d_v equals the latent width
  MatrixXd attribute;  // attribute_vocab x latent
  MatrixXd relation;   // relation_count x latent
};

std::vector<Occurrence> threshold_items(const Eigen::VectorXd& scores, Index entity, const char* prefix) {
  std::vector<Occurrence> items;
  for (Index j = 0; j < scores.size(); ++j) {
    if (scores[j] > kBagThreshold) items.push_back(Occurrence{entity, prefix + std::to_string(j)});
  }
  return items;
}

// Modality features of one graph. `entity_of[i]` is the id that latent row i
// carries in this graph.
void fill_features(RawGraph& g, const MatrixXd& latent, const std::vector<Index>& entity_of,
                   const Projections& proj, const SyntheticConfig& cfg, Rng& rng) {
  const Index n = cfg.entity_count;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution missing(cfg.missing_image_prob);
  g.visual = MatrixXf::Zero(n, cfg.visual_dim);
  std::vector<bool> present(static_cast<std::size_t>(n), false);
  std::vector<std::vector<Occurrence>> attrs(static_cast<std::size_t>(n));
  std::vector<std::vector<Occurrence>> rels(static_cast<std::size_t>(n));

  for (Index i = 0; i < n; ++i) {
    const Index e = entity_of[static_cast<std::size_t>(i)];
    const Eigen::VectorXd z = latent.row(i).transpose();

    Eigen::VectorXd v = proj.visual * z;
    for (Index j = 0; j < v.size(); ++j) v[j] += cfg.noise_std * noise(rng);
    const bool has = !missing(rng);
    if (has) g.visual.row(e) = v.transpose().cast<float>();
    present[static_cast<std::size_t>(e)] = has;

    Eigen::VectorXd a = proj.attribute * z;
    for (Index j = 0; j < a.size(); ++j) a[j] += cfg.noise_std * noise(rng);
    attrs[static_cast<std::size_t>(e)] = threshold_items(a, e, "attr_");

    Eigen::VectorXd r = proj.relation * z;
    for (Index j = 0; j < r.size(); ++j) r[j] += cfg.noise_std * noise(rng);
    rels[static_cast<std::size_t>(e)] = threshold_items(r, e, "rel_");
  }
  for (Index e = 0; e < n; ++e) {
    if (present[static_cast<std::size_t>(e)]) g.with_image.push_back(e);
    auto& ai = attrs[static_cast<std::size_t>(e)];
    g.attributes.insert(g.attributes.end(), ai.begin(), ai.end());
    auto& ri = rels[static_cast<std::size_t>(e)];
    g.relations.insert(g.relations.end(), ri.begin(), ri.end());
  }
}

std::vector<Triple> drop_edges(const std::vector<Triple>& triples, double p, Rng& rng) {
  std::bernoulli_distribution drop(p);
  std::vector<Triple> kept;
  kept.reserve(triples.size());
  for (const auto& t : triples) {
    if (!drop(rng)) kept.push_back(t);
  }
  return kept;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (entity_count < 2) throw ContractError("synthetic: entity_count must be at least 2");
  if (relation_count < 1) throw ContractError("synthetic: relation_count must be positive");
  if (attribute_vocab < 1) throw ContractError("synthetic: attribute_vocab must be positive");
  if (visual_dim < 1) throw ContractError("synthetic: visual_dim must be positive");
  if (!(mean_degree > 0.0)) throw ContractError("synthetic: mean_degree must be positive");
  if (!(noise_std >= 0.0)) throw ContractError("synthetic: noise_std must be non-negative");
  auto probability = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!probability(edge_drop_prob)) throw ContractError("synthetic: edge_drop_prob must lie in [0, 1]");
  if (!probability(missing_image_prob)) throw ContractError("synthetic: missing_image_prob must lie in [0, 1]");
}

RawDataset generate_synthetic_raw(const SyntheticConfig& cfg) {
  cfg.validate();
  const Index n = cfg.entity_count;

  Rng latent_rng = make_rng(cfg.seed, kLatent);
  const MatrixXd latent = gaussian(latent_rng, n, kSyntheticLatentDim, 1.0);

  // First graph: each entity emits a Poisson(mean_degree) number of edges to
  // uniformly chosen other entities with uniform relation labels.
  Rng structure = make_rng(cfg.seed, kStructure);
  std::poisson_distribution<int> degree(cfg.mean_degree);
  std::uniform_int_distribution<Index> other(0, n - 2);
  std::uniform_int_distribution<Index> relation(0, cfg.relation_count - 1);
  std::vector<Triple> base;
  for (Index h = 0; h < n; ++h) {
    const int k = degree(structure);
    for (int j = 0; j < k; ++j) {
      Index t = other(structure);
      if (t >= h) ++t;
      base.push_back(Triple{h, relation(structure), t});
    }
  }

  Rng perm_rng = make_rng(cfg.seed, kPermutation);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), perm_rng);
  std::vector<Index> identity(static_cast<std::size_t>(n));
  std::iota(identity.begin(), identity.end(), Index{0});

  std::vector<Triple> mapped;
  mapped.reserve(base.size());
  for (const auto& t : base) {
    mapped.push_back(Triple{perm[static_cast<std::size_t>(t.head)], t.relation,
                            perm[static_cast<std::size_t>(t.tail)]});
  }

  Rng proj_rng = make_rng(cfg.seed, kProjection);
  const double unit = 1.0 / std::sqrt(static_cast<double>(kSyntheticLatentDim));
  Projections proj;
  proj.visual = cfg.visual_dim == kSyntheticLatentDim
                    ? MatrixXd::Identity(kSyntheticLatentDim, kSyntheticLatentDim)
                    : gaussian(proj_rng, cfg.visual_dim, kSyntheticLatentDim, unit);
  proj.attribute = gaussian(proj_rng, cfg.attribute_vocab, kSyntheticLatentDim, unit);
  proj.relation = gaussian(proj_rng, cfg.relation_count, kSyntheticLatentDim, unit);

  RawDataset data;
  for (RawGraph* g : {&data.first, &data.second}) {
    g->entity_count = n;
    g->relation_count = cfg.relation_count;
  }
  Rng drop1 = make_rng(cfg.seed, kDropFirst);
  Rng drop2 = make_rng(cfg.seed, kDropSecond);
  data.first.triples = drop_edges(base, cfg.edge_drop_prob, drop1);
  data.second.triples = drop_edges(mapped, cfg.edge_drop_prob, drop2);

  Rng feat1 = make_rng(cfg.seed, kFeaturesFirst);
  Rng feat2 = make_rng(cfg.seed, kFeaturesSecond);
  fill_features(data.first, latent, identity, proj, cfg, feat1);
  fill_features(data.second, latent, perm, proj, cfg, feat2);

  data.seeds.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) data.seeds.push_back(SeedPair{i, perm[static_cast<std::size_t>(i)]});
  return data;
}

LoadedDataset generate_synthetic(const SyntheticConfig& cfg, const LoadOptions& options) {
  return build_dataset(generate_synthetic_raw(cfg), options);
}

}  // namespace mmalign
