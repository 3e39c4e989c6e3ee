#include "mmalign/checkpoint.hpp"

#include <fstream>

namespace mmalign {

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json dims_json(const ModelDims& d) {
  return {{"embedding", d.embedding}, {"visual", d.visual}, {"attribute", d.attribute},
          {"relation_bag", d.relation_bag}, {"fused", d.fused}, {"graph", d.graph},
          {"rank", d.rank}, {"layers", d.layers}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.embedding = j.at("embedding").get<Index>();
  d.visual = j.at("visual").get<Index>();
  d.attribute = j.at("attribute").get<Index>();
  d.relation_bag = j.at("relation_bag").get<Index>();
  d.fused = j.at("fused").get<Index>();
  d.graph = j.at("graph").get<Index>();
  d.rank = j.at("rank").get<Index>();
  d.layers = j.at("layers").get<Index>();
  return d;
}

std::string file_for(const std::string& name) { return name + ".bin"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params, Index relation_table_size,
                     const nlohmann::json& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params.named()) {
    write_f32_matrix(dir / file_for(p.name), p.tensor.value().cast<float>());
    tensors.push_back({{"name", p.name}, {"rows", p.tensor.rows()}, {"cols", p.tensor.cols()},
                       {"file", file_for(p.name)}});
  }
  const nlohmann::json meta{{"format", "mmea-checkpoint"},
                            {"version", kCheckpointVersion},
                            {"variant", to_string(params.variant)},
                            {"relation_table_size", relation_table_size},
                            {"dims", dims_json(params.dims)},
                            {"tensors", tensors},
                            {"config", config}};
  std::ofstream out(dir / "checkpoint.json");
  out << meta.dump(2) << '\n';
  if (!out) throw CheckpointError("cannot write " + (dir / "checkpoint.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta_path = dir / "checkpoint.json";
  std::ifstream in(meta_path);
  if (!in) throw CheckpointError("cannot open " + meta_path.string());

  Checkpoint ck;
  try {
    const nlohmann::json meta = nlohmann::json::parse(in);
    if (meta.at("format") != "mmea-checkpoint") throw CheckpointError(meta_path.string() + ": not a checkpoint");
    if (meta.at("version") != kCheckpointVersion) {
      throw CheckpointError(meta_path.string() + ": unsupported version " + meta.at("version").dump());
    }
    ck.relation_table_size = meta.at("relation_table_size").get<Index>();
    ck.config = meta.value("config", nlohmann::json::object());
    ck.params = ModelParams::init(dims_from_json(meta.at("dims")),
                                  parse_fusion_variant(meta.at("variant").get<std::string>()),
                                  ck.relation_table_size, 0);

    const auto& listed = meta.at("tensors");
    const std::vector<NamedTensor> expected = ck.params.named();
    if (listed.size() != expected.size()) {
      throw CheckpointError(meta_path.string() + ": lists " + std::to_string(listed.size()) + " tensors, model has " +
                            std::to_string(expected.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& entry = listed[i];
      ad::Tensor target = expected[i].tensor;
      if (entry.at("name") != expected[i].name) {
        throw CheckpointError(meta_path.string() + ": expected tensor " + expected[i].name + ", found " +
                              entry.at("name").get<std::string>());
      }
      const auto path = dir / entry.at("file").get<std::string>();
      MatrixXf stored;
      try {
        stored = read_f32_matrix(path);
      } catch (const LoadError& e) {
        throw CheckpointError(e.what());
      }
      if (stored.rows() != target.rows() || stored.cols() != target.cols()) {
        throw CheckpointError(path.string() + ": shape [" + std::to_string(stored.rows()) + "x" +
                              std::to_string(stored.cols()) + "] does not match " + expected[i].name + " [" +
                              std::to_string(target.rows()) + "x" + std::to_string(target.cols()) + "]");
      }
      target.mutable_value() = stored.cast<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(meta_path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(meta_path.string() + ": " + e.what());
  }
  return ck;
}

void round_to_float(const ModelParams& params) {
  for (const auto& p : params.named()) {
    ad::Tensor t = p.tensor;
    t.mutable_value() = t.value().cast<float>().cast<double>();
  }
}

}  // namespace mmalign
