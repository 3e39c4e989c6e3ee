#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mmalign/mmkg.hpp"

namespace fs = std::filesystem;
using namespace mmalign;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmalign_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

RawGraph tiny_graph(Index first_image) {
  RawGraph g;
  g.entity_count = 3;
  g.relation_count = 2;
  g.triples = {{0, 0, 1}, {1, 1, 2}};
  g.attributes = {{0, "color"}, {2, "size"}, {2, "color"}};
  g.relations = {{0, "r0"}, {1, "r0"}, {1, "r1"}};
  g.visual = MatrixXf::Zero(3, 2);
  g.visual.row(first_image) << 0.5f, -1.25f;
  g.visual.row(2) << 2.0f, 3.0f;
  g.with_image = {first_image, 2};
  return g;
}

RawDataset tiny_dataset() {
  RawDataset d;
  d.first = tiny_graph(0);
  d.second = tiny_graph(1);
  d.seeds = {{0, 1}, {2, 2}};
  return d;
}

}  // namespace

TEST(NeutralFormat, MinimalFixtureRoundTrips) {
  const auto dir = scratch_dir("roundtrip");
  const RawDataset d = tiny_dataset();
  write_raw_dataset(d, dir);
  EXPECT_EQ(read_raw_dataset(dir), d);
  for (const char* f : {"triples_1.tsv", "attrs_2.tsv", "rels_1.tsv", "visual_2.bin", "has_image_1.tsv",
                        "seeds.tsv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(NeutralFormat, HeadIndexAtEntityCountIsRejected) {
  const auto dir = scratch_dir("boundary");
  write_raw_dataset(tiny_dataset(), dir);
  spit(dir / "triples_1.tsv", "0\t0\t1\n3\t1\t2\n");
  try {
    read_raw_dataset(dir);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("triples_1.tsv:2"), std::string::npos) << e.what();
  }
}

TEST(NeutralFormat, BinaryHeaderErrorsNameFileAndOffset) {
  const auto dir = scratch_dir("header");
  write_raw_dataset(tiny_dataset(), dir);
  std::string bytes = slurp(dir / "visual_1.bin");
  bytes[2] = 'X';
  spit(dir / "visual_1.bin", bytes);
  try {
    read_raw_dataset(dir);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("visual_1.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset 0"), std::string::npos) << msg;
  }
  bytes = slurp(dir / "visual_2.bin");
  spit(dir / "visual_1.bin", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_raw_dataset(dir), LoadError);
}

TEST(NeutralFormat, F32LayoutIsLittleEndianRowMajor) {
  const auto dir = scratch_dir("f32");
  fs::create_directories(dir);
  MatrixXf m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_f32_matrix(dir / "m.bin", m);
  const std::string bytes = slurp(dir / "m.bin");
  ASSERT_EQ(bytes.size(), 8u + 16u + 6u * 4u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("MMEAF32\0", 8));
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);
  float second;
  std::memcpy(&second, bytes.data() + 28, 4);
  EXPECT_EQ(second, 2.0f);
  EXPECT_EQ(read_f32_matrix(dir / "m.bin"), m);
}

TEST(NeutralFormat, ManifestCountsAreChecked) {
  const auto dir = scratch_dir("manifest");
  write_raw_dataset(tiny_dataset(), dir);
  spit(dir / "seeds.tsv", "0\t1\n");
  EXPECT_THROW(read_raw_dataset(dir), LoadError);
}

// Directory laid out by hand the way the benchmark converter writes it:
// extra manifest keys, absent visual rows zeroed, optional counts omitted.
TEST(NeutralFormat, ConverterStyleDirectoryLoads) {
  const auto dir = scratch_dir("converter");
  fs::create_directories(dir);
  spit(dir / "triples_1.tsv", "0\t0\t1\n1\t0\t2\n");
  spit(dir / "triples_2.tsv", "2\t0\t1\n");
  spit(dir / "attrs_1.tsv", "0\thttp://x/name\n1\thttp://x/born\n");
  spit(dir / "attrs_2.tsv", "1\thttp://x/name\n");
  spit(dir / "rels_1.tsv", "0\thttp://x/r\n");
  spit(dir / "rels_2.tsv", "2\thttp://x/r\n");
  MatrixXf v1 = MatrixXf::Zero(3, 4);
  v1.row(0).setConstant(1.0f);
  v1.row(2).setConstant(-1.0f);
  write_f32_matrix(dir / "visual_1.bin", v1);
  write_f32_matrix(dir / "visual_2.bin", MatrixXf::Ones(3, 4));
  spit(dir / "has_image_1.tsv", "0\n2\n");
  spit(dir / "seeds.tsv", "0\t1\n1\t0\n2\t2\n");
  spit(dir / "manifest.json", R"({"format": "mmea-neutral", "version": 1, "source": "fixture",
    "coverage": 0.66, "checksums": {},
    "graphs": [{"entities": 3, "relations": 1, "triples": 2},
               {"entities": 3, "relations": 1}],
    "seeds": 3})");

  LoadOptions opt;
  opt.top_k = 1;
  opt.train_ratio = 0.5;
  const LoadedDataset d = load_dataset(dir, opt);
  d.first.validate();
  d.second.validate();
  EXPECT_EQ(d.first.attr_bag.cols(), 1);
  EXPECT_EQ(d.attribute_vocab.begin()->first, "http://x/name");
  EXPECT_FALSE(d.first.has_image[1]);
  EXPECT_TRUE(d.second.has_image[1]);
  EXPECT_FALSE(d.first.visual.row(1).isZero());
  EXPECT_EQ(d.seeds.train.size() + d.seeds.test.size(), 3u);
}

TEST(TopK, HandCounts) {
  std::vector<Occurrence> a{{0, "a"}, {1, "b"}, {2, "a"}, {0, "c"}, {1, "a"}};
  std::vector<Occurrence> b{{0, "b"}, {1, "a"}, {2, "b"}, {3, "a"}};
  const std::vector<std::span<const Occurrence>> lists{a, b};
  const Vocabulary v = topk_vocabulary(lists, 2);
  EXPECT_EQ(v, (Vocabulary{{"a", 0}, {"b", 1}}));
}

TEST(TopK, TiesKeepFirstOccurrence) {
  std::vector<Occurrence> a{{0, "z"}, {0, "y"}, {0, "x"}};
  const std::vector<std::span<const Occurrence>> lists{a};
  EXPECT_EQ(topk_vocabulary(lists, 2), (Vocabulary{{"z", 0}, {"y", 1}}));
}

TEST(TopK, MatchesFullSortOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Occurrence> a, b;
    std::uniform_int_distribution<int> item(0, 30);
    for (int i = 0; i < 200; ++i) (i % 2 ? a : b).push_back({i % 7, "w" + std::to_string(item(rng) * item(rng) % 31)});
    const Index k = 1 + trial % 12;
    std::vector<std::span<const Occurrence>> lists{a, b};
    const Vocabulary v = topk_vocabulary(lists, k);

    std::map<std::string, int> count, first;
    int pos = 0;
    for (const auto* l : {&a, &b}) {
      for (const auto& o : *l) {
        ++count[o.item];
        first.try_emplace(o.item, pos++);
      }
    }
    std::vector<std::string> all;
    for (const auto& [s, c] : count) all.push_back(s);
    std::sort(all.begin(), all.end(), [&](const auto& x, const auto& y) {
      return count[x] != count[y] ? count[x] > count[y] : first[x] < first[y];
    });
    all.resize(std::min<std::size_t>(all.size(), k));
    Vocabulary expected;
    for (std::size_t i = 0; i < all.size(); ++i) expected[all[i]] = static_cast<Index>(i);
    ASSERT_EQ(v, expected) << "trial " << trial;
  }
}

TEST(SplitSeeds, SizesAndDeterminism) {
  std::vector<SeedPair> ten;
  for (Index i = 0; i < 10; ++i) ten.push_back({i, 9 - i});
  const AlignmentSeeds s = split_seeds(ten, 0.2, 11);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.test.size(), 8u);
  const AlignmentSeeds again = split_seeds(ten, 0.2, 11);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);

  std::vector<SeedPair> big;
  for (Index i = 0; i < 12846; ++i) big.push_back({i, i});
  EXPECT_EQ(split_seeds(big, 0.8, 1).train.size(), 10277u);

  EXPECT_THROW(split_seeds(std::span(ten).first(1), 0.5, 0), ContractError);
  EXPECT_THROW(split_seeds(ten, 1.0, 0), ContractError);
}

TEST(Seeds, InvariantsAreEnforced) {
  AlignmentSeeds s;
  s.train = {{0, 0}, {1, 1}};
  s.test = {{2, 2}};
  s.validate();
  s.pseudo = {{{2, 2}, 20}};
  s.validate();
  s.pseudo = {{{1, 3}, 20}};
  EXPECT_THROW(s.validate(), ContractError);
  s.pseudo.clear();
  s.test = {{2, 1}};
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(MissingImages, FilledOnceFromSeededNormal) {
  RawDataset d = tiny_dataset();
  const LoadedDataset a = build_dataset(d, {});
  const LoadedDataset b = build_dataset(d, {});
  EXPECT_EQ(a.first.visual, b.first.visual);
  EXPECT_FALSE(a.first.visual.row(1).isZero());
  EXPECT_EQ(a.first.visual.row(0).cast<float>(), d.first.visual.row(0));
  LoadOptions other;
  other.missing_image_seed = 99;
  EXPECT_NE(build_dataset(d, other).first.visual.row(1), a.first.visual.row(1));
}

TEST(Synthetic, ZeroNoiseIsAnIsomorphism) {
  SyntheticConfig cfg;
  cfg.edge_drop_prob = 0.0;
  cfg.noise_std = 0.0;
  cfg.seed = 3;
  const RawDataset raw = generate_synthetic_raw(cfg);
  std::vector<Index> perm(cfg.entity_count);
  for (const auto& p : raw.seeds) perm[p.left] = p.right;
  std::multiset<std::tuple<Index, Index, Index>> mapped, second;
  for (const auto& t : raw.first.triples) mapped.insert({perm[t.head], t.relation, perm[t.tail]});
  for (const auto& t : raw.second.triples) second.insert({t.head, t.relation, t.tail});
  EXPECT_EQ(mapped, second);

  const LoadedDataset d = generate_synthetic(cfg, {});
  for (const auto& p : raw.seeds) {
    ASSERT_EQ(d.first.visual.row(p.left), d.second.visual.row(p.right));
    ASSERT_EQ(d.first.attr_bag.row(p.left), d.second.attr_bag.row(p.right));
    ASSERT_EQ(d.first.rel_bag.row(p.left), d.second.rel_bag.row(p.right));
  }
}

TEST(Synthetic, TripleCountNearExpectation) {
  SyntheticConfig cfg;
  cfg.edge_drop_prob = 0.0;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    total += static_cast<double>(generate_synthetic_raw(cfg).first.triples.size());
  }
  EXPECT_NEAR(total / 20.0, 1200.0, 40.0);
}

TEST(Synthetic, RandomConfigsSatisfyInvariants) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    SyntheticConfig cfg;
    cfg.entity_count = 5 + static_cast<Index>(unit(rng) * 60);
    cfg.relation_count = 1 + static_cast<Index>(unit(rng) * 8);
    cfg.mean_degree = unit(rng) * 5;
    cfg.edge_drop_prob = unit(rng);
    cfg.noise_std = unit(rng);
    cfg.attribute_vocab = 1 + static_cast<Index>(unit(rng) * 30);
    cfg.visual_dim = 1 + static_cast<Index>(unit(rng) * 40);
    cfg.missing_image_prob = unit(rng) * 0.5;
    cfg.seed = trial;
    LoadOptions opt;
    opt.top_k = 1 + trial;
    const LoadedDataset d = generate_synthetic(cfg, opt);
    ASSERT_NO_THROW(d.first.validate()) << "trial " << trial;
    ASSERT_NO_THROW(d.second.validate()) << "trial " << trial;
    ASSERT_NO_THROW(d.seeds.validate()) << "trial " << trial;
    EXPECT_LE(d.attribute_vocab.size(), static_cast<std::size_t>(opt.top_k));
    EXPECT_EQ(d.first.attr_bag.cols(), opt.top_k);
  }
}

TEST(Synthetic, FixedSeedIsBitReproducible) {
  SyntheticConfig cfg;
  cfg.seed = 42;
  cfg.missing_image_prob = 0.2;
  const RawDataset a = generate_synthetic_raw(cfg);
  EXPECT_EQ(a, generate_synthetic_raw(cfg));
  const auto da = scratch_dir("repro_a");
  const auto db = scratch_dir("repro_b");
  write_raw_dataset(a, da);
  write_raw_dataset(generate_synthetic_raw(cfg), db);
  for (const auto& entry : fs::directory_iterator(da)) {
    EXPECT_EQ(slurp(entry.path()), slurp(db / entry.path().filename())) << entry.path();
  }
  cfg.seed = 43;
  EXPECT_FALSE(a == generate_synthetic_raw(cfg));
}

TEST(Synthetic, GeneratedDirectoryLoads) {
  const auto dir = scratch_dir("generated");
  SyntheticConfig cfg;
  write_raw_dataset(generate_synthetic_raw(cfg), dir);
  const LoadedDataset from_disk = load_dataset(dir, {});
  const LoadedDataset in_memory = generate_synthetic(cfg, {});
  EXPECT_EQ(from_disk.first.entity_count, 200);
  EXPECT_EQ(from_disk.first.visual, in_memory.first.visual);
  EXPECT_EQ(from_disk.second.attr_bag, in_memory.second.attr_bag);
  EXPECT_EQ(from_disk.seeds.train, in_memory.seeds.train);
}
