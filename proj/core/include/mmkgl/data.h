#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgl/tensor.h"

namespace mmkgl {

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StratificationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModalityKind { kContinuous, kDiscrete };

/// How one discrete column decides that two subjects agree.
struct MatchRule {
  enum class Type { kExact, kThreshold };
  Type type = Type::kExact;
  double theta = 0.0;  // kThreshold: match iff |a - b| < theta

  static MatchRule exact() { return {Type::kExact, 0.0}; }
  static MatchRule threshold(double theta) { return {Type::kThreshold, theta}; }
};

struct ModalityMatrix {
  std::string name;
  ModalityKind kind = ModalityKind::kContinuous;
  Matrix data;                   // subjects x features
  std::vector<MatchRule> match;  // discrete only, one per column

  bool continuous() const { return kind == ModalityKind::kContinuous; }
};

struct Dataset {
  int classes = 2;
  std::vector<int> labels;
  std::vector<ModalityMatrix> modalities;

  int subjects() const { return static_cast<int>(labels.size()); }
  /// Throws LoadError describing the first violated invariant.
  void validate() const;
  const ModalityMatrix& modality(const std::string& name) const;
  bool has_modality(const std::string& name) const;
  /// Copy keeping only the named modalities, in the given order.
  Dataset select(const std::vector<std::string>& names) const;
};

/// Reads a JSON manifest plus the CSV files it references.
Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes manifest.json, labels.csv and one <name>.csv per modality into
/// `directory` (created if missing). Values use shortest round-trip text, so
/// load_dataset(save_dataset(d)) is bit-exact.
void save_dataset(const Dataset& dataset, const std::filesystem::path& directory);

struct SynthConfig {
  int subjects = 200;
  int dominant_features = 100;
  int planted_features = 5;
  int weak_features = 16;
  int weak_planted = 4;
  double separation = 4.0;  // distance between class means, dominant modality
  double noise = 1.0;
  double phenotype_agreement = 0.7;
  double age_theta = 2.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Gaussian class-conditional modalities "fc" (dominant), "anat", "func"
/// (separation / 4) and a discrete "phe" modality with columns
/// {sex: exact, site: exact, age: threshold(age_theta)}.
Dataset generate_synthetic(const SynthConfig& config);
/// Indices of the informative columns of the dominant modality.
std::vector<int> planted_features(const SynthConfig& config);

struct SplitRound {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct SplitPlan {
  int folds = 0;
  std::vector<int> fold_of;  // per subject
  std::vector<SplitRound> rounds;

  std::vector<int> fold_members(int fold) const;
};

/// Stratified K folds. Round r tests on fold r, validates on fold (r+1)%K
/// and trains on the rest.
SplitPlan make_splits(const Dataset& dataset, int folds, std::uint64_t seed);

}  // namespace mmkgl
