#include "mmalign/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mmalign/checkpoint.hpp"

namespace mmalign::cli {

namespace {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("MMEA_LOG_LEVEL");
  if (env == nullptr || std::string(env).empty()) return LogLevel::kInfo;
  const std::string v(env);
  if (v == "error") return LogLevel::kError;
  if (v == "info") return LogLevel::kInfo;
  if (v == "debug") return LogLevel::kDebug;
  throw ContractError("MMEA_LOG_LEVEL must be error, info or debug, got '" + v + "'");
}

template <typename... Args>
void log(LogLevel level, fmt::format_string<Args...> f, Args&&... args) {
  if (level <= log_level()) fmt::print(stderr, "mmea: {}\n", fmt::format(f, std::forward<Args>(args)...));
}

void write_loss_trace(const std::vector<EpochLog>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "epoch\tloss\tsupervision\tpseudo\ttest_hits1\n";
  for (const auto& e : trace) {
    out << fmt::format("{}\t{:.9g}\t{}\t{}\t{}\n", e.epoch, e.loss, e.supervision, e.pseudo,
                       e.eval ? fmt::format("{:.6f}", e.eval->mean.hits1) : std::string("-"));
  }
  if (!out) throw Error("cannot write " + path.string());
}

EvalReport final_report(const ModelParams& params, const LoadedDataset& data, const RankOptions& rank) {
  const ModelInputs inputs = ModelInputs::build(data.first, data.second);
  const Embeddings e = embed(params, inputs);
  return evaluate(e.first, e.second, data.seeds.test, rank);
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  synthetic.seed = seed;
  load.split_seed = seed;
  load.missing_image_seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  if (data.empty()) synthetic.validate();
  train.validate();
  ModelDims probe = dims;
  probe.validate();
  if (load.top_k < 1) throw ContractError("top-k must be at least 1");
  if (!(load.train_ratio > 0.0 && load.train_ratio < 1.0)) throw ContractError("train ratio must lie in (0, 1)");
  if (rank.threads < 1) throw ContractError("threads must be at least 1");
  if (repeats < 1) throw ContractError("repeats must be at least 1");
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  const auto& t = c.train;
  return {
      {"data", c.data.string()},
      {"entities", s.entity_count},
      {"relations", s.relation_count},
      {"degree", s.mean_degree},
      {"edge_drop", s.edge_drop_prob},
      {"noise", s.noise_std},
      {"attr_vocab", s.attribute_vocab},
      {"visual_dim", s.visual_dim},
      {"missing_image", s.missing_image_prob},
      {"synthetic_seed", s.seed},
      {"top_k", c.load.top_k},
      {"train_ratio", c.load.train_ratio},
      {"split_seed", c.load.split_seed},
      {"missing_image_seed", c.load.missing_image_seed},
      {"tau", t.temperature},
      {"negatives", t.negatives},
      {"lr", t.learning_rate},
      {"weight_decay", t.weight_decay},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"expand_every", t.expand_every},
      {"expand_threshold", t.expand_threshold},
      {"seed", t.seed},
      {"variant", to_string(t.variant)},
      {"dim", c.dims.embedding},
      {"hidden", c.dims.graph},
      {"rank", c.dims.rank},
      {"layers", c.dims.layers},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  auto& s = c.synthetic;
  c.data = j.at("data").get<std::string>();
  s.entity_count = j.at("entities").get<Index>();
  s.relation_count = j.at("relations").get<Index>();
  s.mean_degree = j.at("degree").get<double>();
  s.edge_drop_prob = j.at("edge_drop").get<double>();
  s.noise_std = j.at("noise").get<double>();
  s.attribute_vocab = j.at("attr_vocab").get<Index>();
  s.visual_dim = j.at("visual_dim").get<Index>();
  s.missing_image_prob = j.at("missing_image").get<double>();
  s.seed = j.at("synthetic_seed").get<std::uint64_t>();
  c.load.top_k = j.at("top_k").get<Index>();
  c.load.train_ratio = j.at("train_ratio").get<double>();
  c.load.split_seed = j.at("split_seed").get<std::uint64_t>();
  c.load.missing_image_seed = j.at("missing_image_seed").get<std::uint64_t>();
  auto& t = c.train;
  t.temperature = j.at("tau").get<double>();
  t.negatives = j.at("negatives").get<Index>();
  t.learning_rate = j.at("lr").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<Index>();
  t.expand_every = j.at("expand_every").get<int>();
  t.expand_threshold = j.at("expand_threshold").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.variant = parse_fusion_variant(j.at("variant").get<std::string>());
  c.dims.embedding = j.at("dim").get<Index>();
  c.dims.graph = c.dims.fused = j.at("hidden").get<Index>();
  c.dims.rank = j.at("rank").get<Index>();
  c.dims.layers = j.at("layers").get<Index>();
  return c;
}

LoadedDataset load_run_data(const RunConfig& cfg) {
  if (cfg.data.empty()) return generate_synthetic(cfg.synthetic, cfg.load);
  return load_dataset(cfg.data, cfg.load);
}

RawDataset cmd_generate(const RunConfig& cfg) {
  cfg.synthetic.validate();
  RawDataset raw = generate_synthetic_raw(cfg.synthetic);
  write_raw_dataset(raw, cfg.out);
  return raw;
}

TrainOutcome cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const LoadedDataset data = load_run_data(cfg);
  log(LogLevel::kInfo, "train: {} + {} entities, {} train / {} test pairs, variant {}", data.first.entity_count,
      data.second.entity_count, data.seeds.train.size(), data.seeds.test.size(), to_string(cfg.train.variant));

  const int period = cfg.train.expand_every > 0 ? cfg.train.expand_every : 20;
  TrainOutcome outcome{train(data, cfg.dims, cfg.train,
                             [period](const EpochLog& e) {
                               const LogLevel level = e.epoch % period == 0 ? LogLevel::kInfo : LogLevel::kDebug;
                               log(level, "epoch {} loss {:.6f} pseudo {}", e.epoch, e.loss, e.pseudo);
                             }),
                       {}};
  round_to_float(outcome.result.params);
  outcome.report = final_report(outcome.result.params, data, cfg.rank);
  return outcome;
}

EvalReport cmd_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ContractError("eval needs --checkpoint");
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  RunConfig stored;
  try {
    stored = run_config_from_json(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(cfg.checkpoint.string() + ": run configuration unreadable: " + e.what());
  }
  if (!cfg.data.empty()) stored.data = cfg.data;
  const LoadedDataset data = load_run_data(stored);
  const ModelInputs inputs = ModelInputs::build(data.first, data.second);
  const ModelDims expected = fit_dims(data, ck.params.dims);
  if (inputs.relation_table_size != ck.relation_table_size || expected.visual != ck.params.dims.visual ||
      expected.attribute != ck.params.dims.attribute || expected.relation_bag != ck.params.dims.relation_bag) {
    throw CheckpointError("checkpoint " + cfg.checkpoint.string() + " does not fit the dataset (relation table " +
                          std::to_string(ck.relation_table_size) + " vs " +
                          std::to_string(inputs.relation_table_size) + ")");
  }
  return final_report(ck.params, data, cfg.rank);
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  std::vector<AblationRow> rows;
  for (auto variant : {FusionVariant::kFull, FusionVariant::kNoLowRank, FusionVariant::kNoAdaptive,
                       FusionVariant::kConcat}) {
    DirectionMetrics total;
    for (int r = 0; r < cfg.repeats; ++r) {
      RunConfig run = cfg;
      run.set_seed(cfg.train.seed + static_cast<std::uint64_t>(r));
      run.train.variant = variant;
      const LoadedDataset data = load_run_data(run);
      const TrainResult result = train(data, run.dims, run.train);
      round_to_float(result.params);
      const EvalReport rep = final_report(result.params, data, run.rank);
      log(LogLevel::kInfo, "ablate: {} seed {} hits1 {:.4f}", to_string(variant), run.train.seed, rep.mean.hits1);
      total.hits1 += rep.mean.hits1;
      total.hits10 += rep.mean.hits10;
      total.mrr += rep.mean.mrr;
    }
    const double n = cfg.repeats;
    rows.push_back({variant, {total.hits1 / n, total.hits10 / n, total.mrr / n}});
  }
  return rows;
}

int run(int argc, const char* const* argv) {
  RunConfig cfg;
  std::uint64_t seed = 0;
  std::string variant = "full";
  bool pessimistic = false;
  bool all_candidates = false;

  CLI::App app{"Multi-modal entity alignment: generate, train, eval, ablate"};
  app.name("mmea");
  app.set_config("--config", "", "INI file of flag=value lines; command-line flags win");
  app.require_subcommand(1, 1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto& s = cfg.synthetic;
  auto& t = cfg.train;
  app.add_option("--data", cfg.data, "neutral-format dataset directory (synthetic data when omitted)");
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint directory (eval)");
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--epochs", t.epochs)->capture_default_str();
  app.add_option("--rank", cfg.dims.rank, "fusion rank R")->capture_default_str();
  app.add_option("--tau", t.temperature, "contrastive temperature")->capture_default_str();
  app.add_option("--layers", cfg.dims.layers, "graph attention layers L")->capture_default_str();
  app.add_option("--variant", variant, "full | no-lowrank | no-adaptive | concat-fusion")->capture_default_str();
  app.add_option("--threads", cfg.rank.threads, "evaluation scoring threads")->capture_default_str();

  app.add_option("--negatives", t.negatives, "negatives per positive (0: batch size - 1)")->capture_default_str();
  app.add_option("--lr", t.learning_rate)->capture_default_str();
  app.add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app.add_option("--batch-size", t.batch_size)->capture_default_str();
  app.add_option("--expand-every", t.expand_every, "pseudo-seed period in epochs (0: off)")->capture_default_str();
  app.add_option("--expand-threshold", t.expand_threshold)->capture_default_str();
  app.add_option("--eval-every", t.eval_every, "test metrics period in epochs (0: off)")->capture_default_str();
  app.add_option("--dim", cfg.dims.embedding, "modality embedding width d")->capture_default_str();
  app.add_option("--hidden", cfg.dims.graph, "fused and graph width d_h = d_g")->capture_default_str();
  app.add_option("--top-k", cfg.load.top_k, "attribute / relation vocabulary size")->capture_default_str();
  app.add_option("--train-ratio", cfg.load.train_ratio)->capture_default_str();
  app.add_option("--repeats", cfg.repeats, "ablate: seeds per variant")->capture_default_str();
  app.add_flag("--pessimistic", pessimistic, "rank ties against the gold entity");
  app.add_flag("--all-candidates", all_candidates, "rank against every entity, not only the test side");

  std::vector<CLI::Option*> synthetic_opts{
      app.add_option("--entities", s.entity_count)->capture_default_str(),
      app.add_option("--relations", s.relation_count)->capture_default_str(),
      app.add_option("--degree", s.mean_degree)->capture_default_str(),
      app.add_option("--edge-drop", s.edge_drop_prob)->capture_default_str(),
      app.add_option("--noise", s.noise_std)->capture_default_str(),
      app.add_option("--attr-vocab", s.attribute_vocab)->capture_default_str(),
      app.add_option("--visual-dim", s.visual_dim)->capture_default_str(),
      app.add_option("--missing-image", s.missing_image_prob)->capture_default_str(),
  };
  for (auto* o : synthetic_opts) o->group("Synthetic data");

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset in the neutral format")->fallthrough();
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint, loss trace and report")->fallthrough();
  auto* eval = app.add_subcommand("eval", "score a checkpoint on its test pairs")->fallthrough();
  auto* ablate = app.add_subcommand("ablate", "train every fusion variant and tabulate")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, std::cout, std::cerr);
    fmt::print(stderr, "mmea: error: {}\n", e.what());
    return e.get_exit_code();
  }

  try {
    cfg.set_seed(seed);
    cfg.dims.fused = cfg.dims.graph;
    cfg.train.variant = parse_fusion_variant(variant);
    cfg.rank.ties = pessimistic ? TieMode::kPessimistic : TieMode::kOptimistic;
    cfg.rank.pool = all_candidates ? CandidatePool::kAllEntities : CandidatePool::kTestSide;
    if (!cfg.data.empty()) {
      for (auto* o : synthetic_opts) {
        if (o->count() > 0) throw ContractError("choose one data source: --data or " + o->get_name());
      }
    }
    log_level();

    if (generate->parsed()) {
      cfg.command = "generate";
      cmd_generate(cfg);
      std::ifstream manifest(cfg.out / "manifest.json");
      std::cout << manifest.rdbuf();
    } else if (train_cmd->parsed()) {
      cfg.command = "train";
      const TrainOutcome outcome = cmd_train(cfg);
      std::filesystem::create_directories(cfg.out);
      const auto ck = cfg.out / "checkpoint";
      save_checkpoint(ck, outcome.result.params, outcome.result.relation_table_size, to_json(cfg));
      write_loss_trace(outcome.result.trace, cfg.out / "loss.tsv");
      write_report(outcome.report, cfg.out);
      std::cout << format_report(outcome.report);
    } else if (eval->parsed()) {
      cfg.command = "eval";
      const EvalReport report = cmd_eval(cfg);
      if (app.get_option("--out")->count() > 0) write_report(report, cfg.out);
      std::cout << format_report(report);
    } else if (ablate->parsed()) {
      cfg.command = "ablate";
      const auto rows = cmd_ablate(cfg);
      std::filesystem::create_directories(cfg.out);
      std::ofstream table(cfg.out / "ablation.tsv");
      std::string text = "variant\thits1\thits10\tmrr\n";
      for (const auto& r : rows) {
        text += fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}\n", to_string(r.variant), r.mean.hits1, r.mean.hits10,
                            r.mean.mrr);
      }
      table << text;
      if (!table) throw Error("cannot write " + (cfg.out / "ablation.tsv").string());
      std::cout << text;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "mmea: error: {}\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace mmalign::cli
