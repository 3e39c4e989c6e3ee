#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmalign/evaluation.hpp"
#include "mmalign/mmkg.hpp"
#include "mmalign/model.hpp"
#include "mmalign/training.hpp"

namespace mmalign::cli {

struct RunConfig {
  std::string command;
  // Data source: a neutral-format directory, or the synthetic generator when
  // empty.
  std::filesystem::path data;
  SyntheticConfig synthetic;
  LoadOptions load;
  TrainConfig train;
  ModelDims dims;
  std::filesystem::path out = ".";
  std::filesystem::path checkpoint;
  RankOptions rank;
  int repeats = 1;  // ablate: seeds seed, seed+1, ...

  // Propagates the master seed to every seeded stage.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Restores the data source and model fields written by to_json.
RunConfig run_config_from_json(const nlohmann::json& j);

LoadedDataset load_run_data(const RunConfig& cfg);

struct TrainOutcome {
  TrainResult result;
  EvalReport report;
};

struct AblationRow {
  FusionVariant variant;
  DirectionMetrics mean;
};

RawDataset cmd_generate(const RunConfig& cfg);
TrainOutcome cmd_train(const RunConfig& cfg);
EvalReport cmd_eval(const RunConfig& cfg);
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);

// Parses argv, runs the command, and maps every failure to a message on
// stderr prefixed "mmea: error: " and a nonzero return.
int run(int argc, const char* const* argv);

}  // namespace mmalign::cli
