#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmkgl/network.h"

namespace mmkgl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trained parameters plus what is needed to rebuild the model around them.
struct Checkpoint {
  ModelConfig model;
  std::vector<std::pair<std::string, Matrix>> parameters;
  std::string dataset;  // manifest path the model was trained on (may be empty)
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  int epoch = -1;
  double validation_accuracy = 0.0;
};

Checkpoint capture(const Model& model);
/// Copies the checkpoint's values into a model of the same architecture.
void restore(const Checkpoint& checkpoint, Model& model);

/// FNV-1a 64 over the parameter names, shapes and raw value bytes.
std::string checkpoint_hash(const Checkpoint& checkpoint);

/// JSON file with a "hash" field over the parameters.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Refuses files without a hash or whose hash does not match.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace mmkgl
