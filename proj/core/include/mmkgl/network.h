#pragma once

// The multi-kernel network: adaptive graph construction, relational
// attention, parallel Chebyshev branches of different orders, and a fusion
// head over the branch predictions.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmkgl/attention.h"
#include "mmkgl/data.h"
#include "mmkgl/graph.h"
#include "mmkgl/spectral.h"
#include "mmkgl/tensor.h"

namespace mmkgl {

inline constexpr double kProbabilityEps = 1e-12;

enum class FusionMode { kCkdt, kConcat, kAdd, kWeight, kAvg };

std::string to_string(FusionMode mode);
/// Throws ConfigError on unknown names.
FusionMode parse_fusion_mode(const std::string& name);

struct ModelConfig {
  std::vector<int> kernel_orders{2, 3, 4};
  int hidden_width = 64;
  FusionMode fusion = FusionMode::kCkdt;
  bool ram_enabled = true;
  int ram_heads = 4;
  int ram_hidden = 16;
  double ram_threshold = 0.5;
  int projection_width = 64;
  std::string dominant_modality = "fc";
  /// Modalities to use, in order; empty means all of them.
  std::vector<std::string> modalities;
  /// Overrides theta of every threshold-matched discrete column.
  std::optional<double> age_theta;

  void validate() const;
};

/// Dataset-derived inputs that stay fixed for a whole run.
struct PreparedData {
  std::vector<std::string> continuous_names;
  std::vector<Matrix> continuous;  // N x d_v
  std::vector<std::string> discrete_names;
  std::vector<Matrix> discrete_graphs;  // N x N, attribute-match counts
  int dominant = 0;                     // index into `continuous`
  std::vector<int> labels;
  int classes = 2;

  const Matrix& dominant_features() const { return continuous[dominant]; }
  int subjects() const { return static_cast<int>(labels.size()); }
};

PreparedData prepare(const Dataset& dataset, const ModelConfig& config);

// ---- building blocks ------------------------------------------------------

/// Two Chebyshev layers (H -> hidden, hidden -> t) with LeakyReLU(0.2)
/// between and a row softmax at the end.
Tensor branch_forward(const std::vector<Tensor>& layer1, const std::vector<Tensor>& layer2,
                      const LaplacianBundle& bundle, const Tensor& features);

/// Cross-entropy of row-stochastic predictions over the masked subjects,
/// probabilities clamped to [eps, 1 - eps]. For two classes this is the
/// binary form -[y ln p1 + (1 - y) ln(1 - p1)].
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                     const std::vector<bool>& mask);

/// Sum of cross_entropy over all branches.
Tensor branch_losses(const std::vector<Tensor>& branch_probs, const std::vector<int>& labels,
                     const std::vector<bool>& mask);

/// Per-subject outer product of K branch outputs flattened to N x t^K,
/// branch 1 on the slowest axis.
Tensor build_ckdt(const std::vector<Tensor>& branch_probs);

struct FusionOutput {
  Tensor logits;
  Tensor probs;
};

/// Fully connected head: softmax(T W + b).
FusionOutput fusion_forward(const Tensor& fused_input, const Tensor& weight, const Tensor& bias);

Tensor fusion_loss(const Tensor& probs, const std::vector<int>& labels,
                   const std::vector<bool>& mask);

Tensor total_loss(const Tensor& mmge, const Tensor& multi_kernel, const Tensor& fusion,
                  double lambda1, double lambda2, double lambda3);

// ---- the model -------------------------------------------------------------

struct ForwardPass {
  std::vector<ModalGraph> continuous_graphs;
  Tensor fused;      // A
  Mask mask;         // neighbors kept for attention / propagation
  Tensor adjacency;  // A-hat fed to every branch
  LaplacianBundle laplacian;
  std::vector<Tensor> branch_probs;
  FusionOutput fusion;
  Tensor dominant_input;  // the dominant-modality leaf
  int zero_projection_rows = 0;
};

class Model {
 public:
  Model(const ModelConfig& config, const PreparedData& data, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Records one full forward pass on `tape`. With track_input the dominant
  /// features enter as a differentiable leaf (used for saliency).
  ForwardPass forward(Tape& tape, const PreparedData& data, bool track_input = false);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  void zero_grad();

  /// Parameter group of a parameter name: theta, psi, xi, branch, fusion.
  static std::string group_of(const std::string& parameter_name);

 private:
  ModelConfig config_;
  int classes_ = 2;
  std::vector<Parameter> thetas_;                                // per continuous modality
  std::vector<Parameter> psi_;                                   // per head
  std::vector<Parameter> xi_;                                    // per head
  std::vector<std::vector<Parameter>> layer1_;                   // per branch, k+1 each
  std::vector<std::vector<Parameter>> layer2_;                   // per branch, k+1 each
  Parameter fusion_weight_;
  Parameter fusion_bias_;
  Parameter mix_;  // kWeight only, 1 x K
};

}  // namespace mmkgl
