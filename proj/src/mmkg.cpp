#include "mmalign/mmkg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mmalign/random.hpp"

namespace mmalign {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "neutral format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'M', 'E', 'A', 'F', '3', '2', '\0'};

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot write");
  return out;
}

Index parse_index(const std::string& field, const fs::path& file, std::size_t line) {
  if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
    throw LoadError(where(file, line) + ": expected a non-negative integer, got '" + field + "'");
  }
  try {
    return static_cast<Index>(std::stoll(field));
  } catch (const std::out_of_range&) {
    throw LoadError(where(file, line) + ": integer out of range '" + field + "'");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

// Calls fn(fields, line_number) for every non-empty line.
template <typename Fn>
void for_each_row(const fs::path& file, std::size_t expected_fields, Fn&& fn) {
  auto in = open_in(file);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != expected_fields) {
      throw LoadError(where(file, number) + ": expected " + std::to_string(expected_fields) +
                      " tab-separated fields, got " + std::to_string(fields.size()));
    }
    fn(fields, number);
  }
}

std::vector<Triple> read_triples(const fs::path& file, Index entity_count, Index relation_count) {
  std::vector<Triple> triples;
  for_each_row(file, 3, [&](const auto& f, std::size_t line) {
    Triple t{parse_index(f[0], file, line), parse_index(f[1], file, line), parse_index(f[2], file, line)};
    if (t.head >= entity_count || t.tail >= entity_count) {
      throw LoadError(where(file, line) + ": entity index out of range (entity_count " +
                      std::to_string(entity_count) + ")");
    }
    if (t.relation >= relation_count) {
      throw LoadError(where(file, line) + ": relation index out of range (relation_count " +
                      std::to_string(relation_count) + ")");
    }
    triples.push_back(t);
  });
  return triples;
}

std::vector<Occurrence> read_occurrences(const fs::path& file, Index entity_count) {
  std::vector<Occurrence> out;
  for_each_row(file, 2, [&](const auto& f, std::size_t line) {
    const Index e = parse_index(f[0], file, line);
    if (e >= entity_count) throw LoadError(where(file, line) + ": entity index out of range");
    if (f[1].empty()) throw LoadError(where(file, line) + ": empty item");
    out.push_back(Occurrence{e, f[1]});
  });
  return out;
}

void write_occurrences(const fs::path& file, const std::vector<Occurrence>& items) {
  auto out = open_out(file);
  for (const auto& o : items) {
    if (o.item.empty() || o.item.find_first_of("\t\n\r") != std::string::npos) {
      throw ContractError(file.string() + ": item '" + o.item + "' is empty or contains a tab/newline");
    }
    out << o.entity << '\t' << o.item << '\n';
  }
}

json read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  auto in = open_in(file);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(file.string() + ": malformed JSON: " + e.what());
  }
}

Index manifest_count(const json& node, const char* key, const fs::path& file) {
  if (!node.contains(key) || !node[key].is_number_unsigned()) {
    throw LoadError(file.string() + ": missing or invalid '" + key + "'");
  }
  return node[key].get<Index>();
}

void check_count(const json& node, const char* key, std::size_t actual, const fs::path& file) {
  if (node.contains(key) && node[key].get<std::size_t>() != actual) {
    throw LoadError(file.string() + ": manifest '" + key + "' is " +
                    std::to_string(node[key].get<std::size_t>()) + " but found " +
                    std::to_string(actual));
  }
}

RawGraph read_graph(const fs::path& dir, int which, const json& node) {
  const fs::path manifest = dir / "manifest.json";
  const std::string suffix = "_" + std::to_string(which) + ".tsv";
  RawGraph g;
  g.entity_count = manifest_count(node, "entities", manifest);
  g.relation_count = manifest_count(node, "relations", manifest);
  g.triples = read_triples(dir / ("triples" + suffix), g.entity_count, g.relation_count);
  g.attributes = read_occurrences(dir / ("attrs" + suffix), g.entity_count);
  g.relations = read_occurrences(dir / ("rels" + suffix), g.entity_count);

  const fs::path visual_file = dir / ("visual_" + std::to_string(which) + ".bin");
  g.visual = read_f32_matrix(visual_file);
  if (g.visual.rows() != g.entity_count) {
    throw LoadError(visual_file.string() + ": " + std::to_string(g.visual.rows()) +
                    " rows for " + std::to_string(g.entity_count) + " entities");
  }
  const fs::path image_file = dir / ("has_image" + suffix);
  if (fs::exists(image_file)) {
    std::set<Index> seen;
    for_each_row(image_file, 1, [&](const auto& f, std::size_t line) {
      const Index e = parse_index(f[0], image_file, line);
      if (e >= g.entity_count) throw LoadError(where(image_file, line) + ": entity index out of range");
      if (!seen.insert(e).second) throw LoadError(where(image_file, line) + ": duplicate entity");
    });
    g.with_image.assign(seen.begin(), seen.end());
  } else {
    g.with_image.resize(static_cast<std::size_t>(g.entity_count));
    for (Index e = 0; e < g.entity_count; ++e) g.with_image[static_cast<std::size_t>(e)] = e;
  }
  check_count(node, "triples", g.triples.size(), manifest);
  check_count(node, "attribute_lines", g.attributes.size(), manifest);
  check_count(node, "relation_lines", g.relations.size(), manifest);
  check_count(node, "images", g.with_image.size(), manifest);
  if (node.contains("visual_dim")) check_count(node, "visual_dim", static_cast<std::size_t>(g.visual.cols()), manifest);
  return g;
}

json graph_manifest(const RawGraph& g) {
  return json{{"entities", g.entity_count},
              {"relations", g.relation_count},
              {"triples", g.triples.size()},
              {"attribute_lines", g.attributes.size()},
              {"relation_lines", g.relations.size()},
              {"images", g.with_image.size()},
              {"visual_dim", g.visual.cols()}};
}

void write_graph(const RawGraph& g, const fs::path& dir, int which) {
  const std::string suffix = "_" + std::to_string(which) + ".tsv";
  {
    auto out = open_out(dir / ("triples" + suffix));
    for (const auto& t : g.triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  }
  write_occurrences(dir / ("attrs" + suffix), g.attributes);
  write_occurrences(dir / ("rels" + suffix), g.relations);
  write_f32_matrix(dir / ("visual_" + std::to_string(which) + ".bin"), g.visual);
  auto out = open_out(dir / ("has_image" + suffix));
  for (Index e : g.with_image) out << e << '\n';
}

MatrixXd bag_matrix(const std::vector<Occurrence>& items, Index entity_count, const Vocabulary& vocab,
                    Index k) {
  MatrixXd bag = MatrixXd::Zero(entity_count, k);
  for (const auto& o : items) {
    if (auto it = vocab.find(o.item); it != vocab.end()) bag(o.entity, it->second) = 1.0;
  }
  return bag;
}

MultiModalKG build_graph(const RawGraph& raw, const Vocabulary& attrs, const Vocabulary& rels,
                         Index k, Rng& rng) {
  MultiModalKG g;
  g.entity_count = raw.entity_count;
  g.relation_count = raw.relation_count;
  g.triples = raw.triples;
  g.attr_bag = bag_matrix(raw.attributes, raw.entity_count, attrs, k);
  g.rel_bag = bag_matrix(raw.relations, raw.entity_count, rels, k);
  g.visual = raw.visual.cast<double>();
  g.has_image.assign(static_cast<std::size_t>(raw.entity_count), false);
  for (Index e : raw.with_image) g.has_image[static_cast<std::size_t>(e)] = true;

  // Empirical spread of the rows that do carry image features.
  double sum = 0.0;
  double sq = 0.0;
  double count = 0.0;
  for (Index e : raw.with_image) {
    sum += g.visual.row(e).sum();
    sq += g.visual.row(e).squaredNorm();
    count += static_cast<double>(g.visual.cols());
  }
  double spread = 1.0;
  if (count > 1.0) {
    const double mu = sum / count;
    const double var = sq / count - mu * mu;
    if (var > 0.0) spread = std::sqrt(var);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index e = 0; e < g.entity_count; ++e) {
    if (g.has_image[static_cast<std::size_t>(e)]) continue;
    do {
      for (Index j = 0; j < g.visual.cols(); ++j) g.visual(e, j) = spread * normal(rng);
    } while (g.visual.cols() > 0 && g.visual.row(e).isZero(0.0));
  }
  return g;
}

}  // namespace

void MultiModalKG::validate() const {
  if (entity_count <= 0) throw ContractError("graph has no entities");
  if (relation_count <= 0) throw ContractError("graph has no relations");
  for (const auto& t : triples) {
    if (t.head < 0 || t.head >= entity_count || t.tail < 0 || t.tail >= entity_count ||
        t.relation < 0 || t.relation >= relation_count) {
      throw ContractError("triple index out of range");
    }
  }
  auto binary = [](const MatrixXd& m) {
    return ((m.array() == 0.0) || (m.array() == 1.0)).all();
  };
  if (attr_bag.rows() != entity_count || !binary(attr_bag)) throw ContractError("attribute bag is not a 0/1 matrix over entities");
  if (rel_bag.rows() != entity_count || !binary(rel_bag)) throw ContractError("relation bag is not a 0/1 matrix over entities");
  if (visual.rows() != entity_count || !visual.allFinite()) throw ContractError("visual matrix malformed");
  if (static_cast<Index>(has_image.size()) != entity_count) throw ContractError("image mask size mismatch");
  for (Index e = 0; e < entity_count; ++e) {
    if (!has_image[static_cast<std::size_t>(e)] && visual.row(e).isZero(0.0)) {
      throw ContractError("entity " + std::to_string(e) + " lacks an image and has an all-zero visual row");
    }
  }
}

void AlignmentSeeds::validate() const {
  std::set<Index> train_left;
  std::set<Index> train_right;
  for (const auto& p : train) {
    if (!train_left.insert(p.left).second || !train_right.insert(p.right).second) {
      throw ContractError("entity repeated within train seeds");
    }
  }
  for (const auto& p : test) {
    if (train_left.count(p.left) || train_right.count(p.right)) {
      throw ContractError("test pair shares an entity with train seeds");
    }
  }
  std::set<Index> pseudo_left;
  std::set<Index> pseudo_right;
  for (const auto& pp : pseudo) {
    if (train_left.count(pp.pair.left) || train_right.count(pp.pair.right)) {
      throw ContractError("pseudo pair collides with a train seed");
    }
    if (!pseudo_left.insert(pp.pair.left).second || !pseudo_right.insert(pp.pair.right).second) {
      throw ContractError("entity repeated within pseudo pairs");
    }
  }
}

std::vector<SeedPair> AlignmentSeeds::supervision() const {
  std::vector<SeedPair> out = train;
  for (const auto& p : pseudo) out.push_back(p.pair);
  return out;
}

void write_f32_matrix(const fs::path& path, const MatrixXf& m) {
  auto out = open_out(path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) throw LoadError(path.string() + ": write failed");
}

MatrixXf read_f32_matrix(const fs::path& path) {
  auto in = open_in(path);
  char magic[8];
  std::uint64_t dims[2];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError(path.string() + ": offset 0: bad magic (expected MMEAF32)");
  }
  if (!in.read(reinterpret_cast<char*>(dims), sizeof(dims))) {
    throw LoadError(path.string() + ": offset 8: truncated header");
  }
  const std::uint64_t limit = std::numeric_limits<std::uint32_t>::max();
  if (dims[0] > limit || dims[1] > limit) throw LoadError(path.string() + ": offset 8: implausible extents");
  const auto expected = fs::file_size(path);
  const std::uint64_t payload = dims[0] * dims[1] * sizeof(float);
  if (expected != 24 + payload) {
    throw LoadError(path.string() + ": offset 24: payload is " + std::to_string(expected - 24) +
                    " bytes, header implies " + std::to_string(payload));
  }
  MatrixXf m(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(payload));
  if (!in) throw LoadError(path.string() + ": offset 24: truncated payload");
  return m;
}

void write_raw_dataset(const RawDataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw LoadError(dir.string() + ": cannot create directory: " + ec.message());
  write_graph(data.first, dir, 1);
  write_graph(data.second, dir, 2);
  {
    auto out = open_out(dir / "seeds.tsv");
    for (const auto& p : data.seeds) out << p.left << '\t' << p.right << '\n';
  }
  json manifest{{"format", "mmea-neutral"},
                {"version", 1},
                {"graphs", json::array({graph_manifest(data.first), graph_manifest(data.second)})},
                {"seeds", data.seeds.size()}};
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

RawDataset read_raw_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": not a directory");
  const json manifest = read_manifest(dir);
  const fs::path manifest_file = dir / "manifest.json";
  if (!manifest.contains("graphs") || !manifest["graphs"].is_array() || manifest["graphs"].size() != 2) {
    throw LoadError(manifest_file.string() + ": 'graphs' must list exactly two graphs");
  }
  RawDataset data;
  data.first = read_graph(dir, 1, manifest["graphs"][0]);
  data.second = read_graph(dir, 2, manifest["graphs"][1]);

  const fs::path seeds_file = dir / "seeds.tsv";
  for_each_row(seeds_file, 2, [&](const auto& f, std::size_t line) {
    SeedPair p{parse_index(f[0], seeds_file, line), parse_index(f[1], seeds_file, line)};
    if (p.left >= data.first.entity_count || p.right >= data.second.entity_count) {
      throw LoadError(where(seeds_file, line) + ": entity index out of range");
    }
    data.seeds.push_back(p);
  });
  const Index declared = manifest_count(manifest, "seeds", manifest_file);
  if (static_cast<std::size_t>(declared) != data.seeds.size()) {
    throw LoadError(seeds_file.string() + ": " + std::to_string(data.seeds.size()) +
                    " seed pairs but manifest declares " + std::to_string(declared));
  }
  return data;
}

Vocabulary topk_vocabulary(std::span<const std::span<const Occurrence>> lists, Index k) {
  if (k < 1) throw ContractError("topk_vocabulary: K must be at least 1");
  struct Tally {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Tally> tallies;
  std::vector<std::string> order;
  for (const auto& list : lists) {
    for (const auto& o : list) {
      auto [it, fresh] = tallies.try_emplace(o.item, Tally{0, order.size()});
      if (fresh) order.push_back(o.item);
      ++it->second.count;
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return tallies[a].count > tallies[b].count;
  });
  Vocabulary vocab;
  const auto keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < keep; ++i) vocab.emplace(order[i], static_cast<Index>(i));
  return vocab;
}

AlignmentSeeds split_seeds(std::span<const SeedPair> pairs, double train_ratio, std::uint64_t seed) {
  if (pairs.size() < 2) throw ContractError("split_seeds: need at least 2 pairs");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ContractError("split_seeds: ratio must lie in (0, 1)");
  std::vector<SeedPair> shuffled(pairs.begin(), pairs.end());
  Rng rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(pairs.size())));
  AlignmentSeeds seeds;
  seeds.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  seeds.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  return seeds;
}

LoadedDataset build_dataset(const RawDataset& raw, const LoadOptions& options) {
  const std::span<const Occurrence> attr_lists[] = {raw.first.attributes, raw.second.attributes};
  const std::span<const Occurrence> rel_lists[] = {raw.first.relations, raw.second.relations};
  LoadedDataset out;
  out.attribute_vocab = topk_vocabulary(attr_lists, options.top_k);
  out.relation_vocab = topk_vocabulary(rel_lists, options.top_k);
  if (raw.first.visual.cols() != raw.second.visual.cols()) {
    throw LoadError("visual feature widths differ between graphs");
  }
  Rng rng1 = make_rng(options.missing_image_seed, 1);
  Rng rng2 = make_rng(options.missing_image_seed, 2);
  out.first = build_graph(raw.first, out.attribute_vocab, out.relation_vocab, options.top_k, rng1);
  out.second = build_graph(raw.second, out.attribute_vocab, out.relation_vocab, options.top_k, rng2);
  out.all_pairs = raw.seeds;
  out.seeds = split_seeds(out.all_pairs, options.train_ratio, options.split_seed);
  out.seeds.validate();
  return out;
}

LoadedDataset load_dataset(const fs::path& dir, const LoadOptions& options) {
  return build_dataset(read_raw_dataset(dir), options);
}

}  // namespace mmalign
