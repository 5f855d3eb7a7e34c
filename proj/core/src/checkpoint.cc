#include "mmkgl/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace mmkgl {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  json j;
  j["kernel_orders"] = c.kernel_orders;
  j["hidden_width"] = c.hidden_width;
  j["fusion_mode"] = to_string(c.fusion);
  j["ram_enabled"] = c.ram_enabled;
  j["ram_heads"] = c.ram_heads;
  j["ram_hidden"] = c.ram_hidden;
  j["ram_threshold"] = c.ram_threshold;
  j["projection_width"] = c.projection_width;
  j["dominant_modality"] = c.dominant_modality;
  j["modalities"] = c.modalities;
  j["age_theta"] = c.age_theta ? json(*c.age_theta) : json(nullptr);
  return j;
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.kernel_orders = j.at("kernel_orders").get<std::vector<int>>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.fusion = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  c.ram_enabled = j.at("ram_enabled").get<bool>();
  c.ram_heads = j.at("ram_heads").get<int>();
  c.ram_hidden = j.at("ram_hidden").get<int>();
  c.ram_threshold = j.at("ram_threshold").get<double>();
  c.projection_width = j.at("projection_width").get<int>();
  c.dominant_modality = j.at("dominant_modality").get<std::string>();
  c.modalities = j.at("modalities").get<std::vector<std::string>>();
  if (j.contains("age_theta") && !j.at("age_theta").is_null())
    c.age_theta = j.at("age_theta").get<double>();
  c.validate();
  return c;
}

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

Checkpoint capture(const Model& model) {
  Checkpoint c;
  c.model = model.config();
  for (const Parameter* p : model.parameters()) c.parameters.emplace_back(p->name, p->value);
  return c;
}

void restore(const Checkpoint& checkpoint, Model& model) {
  auto params = model.parameters();
  if (params.size() != checkpoint.parameters.size())
    throw CheckpointError("checkpoint has " + std::to_string(checkpoint.parameters.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  for (const auto& [name, value] : checkpoint.parameters) {
    Parameter* p = model.find(name);
    if (p == nullptr) throw CheckpointError("model has no parameter '" + name + "'");
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
      throw CheckpointError("parameter '" + name + "' has a different shape");
    p->value = value;
  }
}

std::string checkpoint_hash(const Checkpoint& checkpoint) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, value] : checkpoint.parameters) {
    fnv(h, name.data(), name.size());
    const std::int64_t shape[2] = {value.rows(), value.cols()};
    fnv(h, shape, sizeof(shape));
    fnv(h, value.data(), sizeof(double) * static_cast<std::size_t>(value.size()));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  json j;
  j["format"] = "mmkgl-checkpoint-1";
  j["model"] = config_json(checkpoint.model);
  j["dataset"] = checkpoint.dataset;
  j["split"] = {{"train", checkpoint.train},
                {"validation", checkpoint.validation},
                {"test", checkpoint.test}};
  j["epoch"] = checkpoint.epoch;
  j["validation_accuracy"] = checkpoint.validation_accuracy;
  j["parameters"] = json::array();
  for (const auto& [name, value] : checkpoint.parameters) {
    std::vector<double> flat(value.data(), value.data() + value.size());  // column-major
    j["parameters"].push_back(
        {{"name", name}, {"rows", value.rows()}, {"cols", value.cols()}, {"values", flat}});
  }
  j["hash"] = checkpoint_hash(checkpoint);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path.string() + ": cannot write checkpoint");
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(path.string() + ": checkpoint not found");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": not a checkpoint: " + e.what());
  }
  if (!j.is_object() || !j.contains("hash") || !j.at("hash").is_string())
    throw CheckpointError(path.string() + ": checkpoint hash absent; refusing to use it");
  Checkpoint c;
  try {
    c.model = config_from(j.at("model"));
    c.dataset = j.value("dataset", std::string());
    if (j.contains("split")) {
      c.train = j["split"].at("train").get<std::vector<int>>();
      c.validation = j["split"].at("validation").get<std::vector<int>>();
      c.test = j["split"].at("test").get<std::vector<int>>();
    }
    c.epoch = j.value("epoch", -1);
    c.validation_accuracy = j.value("validation_accuracy", 0.0);
    for (const auto& pj : j.at("parameters")) {
      const auto rows = pj.at("rows").get<Eigen::Index>();
      const auto cols = pj.at("cols").get<Eigen::Index>();
      const auto flat = pj.at("values").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
        throw CheckpointError(path.string() + ": parameter size mismatch");
      Matrix m(rows, cols);
      std::memcpy(m.data(), flat.data(), flat.size() * sizeof(double));
      c.parameters.emplace_back(pj.at("name").get<std::string>(), std::move(m));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed checkpoint: " + e.what());
  }
  if (checkpoint_hash(c) != j.at("hash").get<std::string>())
    throw CheckpointError(path.string() + ": checkpoint hash mismatch; refusing to use it");
  return c;
}

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
}

}  // namespace mmkgl
