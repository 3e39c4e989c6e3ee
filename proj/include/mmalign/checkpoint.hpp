#pragma once

#include <filesystem>

#include <json.hpp>

#include "mmalign/model.hpp"

namespace mmalign {

// A checkpoint is a directory: one f32 matrix file per parameter (same layout
// as the visual feature files) plus checkpoint.json with names, shapes, model
// dimensions and the run configuration.
struct Checkpoint {
  ModelParams params;
  Index relation_table_size = 0;
  nlohmann::json config;
};

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params, Index relation_table_size,
                     const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Rounds every parameter to float precision, so that a model scored in memory
// matches the same model reloaded from disk bit for bit.
void round_to_float(const ModelParams& params);

}  // namespace mmalign
