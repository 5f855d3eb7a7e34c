#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgl/checkpoint.h"
#include "mmkgl/data.h"
#include "mmkgl/network.h"

namespace mmkgl {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int max_epochs = 500;
  int patience = 50;
  std::uint64_t seed = 1;  // parameter initialization
  double lambda1 = 1.0;    // graph embedding loss
  double lambda2 = 1.0;    // per-branch losses
  double lambda3 = 1.0;    // fusion loss

  void validate() const;
};

/// ASD (class 1) is the positive class; ACC/SEN/SPE threshold scores at 0.5.
struct Metrics {
  double acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
  std::optional<double> auc;  // undefined when only one class is present
};

/// `scores` are class-1 probabilities. AUC is the Mann-Whitney statistic
/// with ties counted as one half.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels);

/// Sample mean and standard deviation (n - 1 denominator; 0 for n = 1).
/// AUC statistics cover only the entries where it is defined.
struct MetricSummary {
  Metrics mean;
  Metrics std;
};
MetricSummary summarize(std::span<const Metrics> metrics);

/// Tracks the best validation epoch: higher accuracy wins, ties go to the
/// lower loss. Stops once `patience` epochs pass without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Returns true when this epoch becomes the new best.
  bool update(int epoch, double accuracy, double loss);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_accuracy() const { return best_acc_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = -1;
  double best_acc_ = 0.0;
  double best_loss_ = 0.0;
};

/// Gradient descent with heavy-ball momentum.
class MomentumSgd {
 public:
  MomentumSgd(double learning_rate, double momentum)
      : lr_(learning_rate), momentum_(momentum) {}
  void step(const std::vector<Parameter*>& params);

 private:
  double lr_;
  double momentum_;
  std::vector<Matrix> velocity_;
};

struct FoldResult {
  Metrics test;
  Metrics validation;
  int best_epoch = -1;
  int epochs_run = 0;
  double best_validation_loss = 0.0;
  std::vector<double> train_losses;  // total loss per epoch
  Checkpoint checkpoint;             // parameters at best_epoch
};

/// Trains one split round end to end and reports test metrics of the best
/// validation checkpoint. Throws DivergenceError naming the epoch when the
/// loss stops being finite.
FoldResult train_fold(const PreparedData& data, const SplitRound& round,
                      const ModelConfig& model_config, const TrainConfig& train_config);
FoldResult train_fold(const Dataset& dataset, const SplitRound& round,
                      const ModelConfig& model_config, const TrainConfig& train_config);

/// Class-1 probabilities of the fusion head for every subject.
std::vector<double> predict(Model& model, const PreparedData& data);

Metrics evaluate(Model& model, const PreparedData& data, const std::vector<int>& subjects);

struct CrossValidationConfig {
  int folds = 5;
  int repeats = 2;
  std::uint64_t seed = 1;  // master seed; split and init streams derive from it
  int threads = 0;         // 0: worker_count()
};

struct FoldRecord {
  int repeat = 0;
  int fold = 0;
  Metrics test;
  Metrics validation;
  int best_epoch = -1;
  int epochs_run = 0;
};

struct CrossValidationResult {
  std::vector<FoldRecord> folds;  // repeat-major
  MetricSummary summary;
  std::vector<Checkpoint> checkpoints;  // parallel to `folds`
};

/// K-fold cross-validation repeated with fresh split seeds. Folds run on up
/// to `threads` workers; results do not depend on the worker count.
CrossValidationResult cross_validate(const Dataset& dataset, const CrossValidationConfig& cv,
                                     const ModelConfig& model_config,
                                     const TrainConfig& train_config);

/// MMKGL_THREADS when set and positive, else hardware concurrency (>= 1).
int worker_count();

// ---- gradient audit -------------------------------------------------------

struct AuditOptions {
  int subjects = 12;
  int samples_per_group = 20;
  double step = 1e-5;
  double tolerance = 1e-3;
  /// Relative error is |a - n| / max(|a|, |n|, floor_per_loss * max(1, |loss|)).
  double floor_per_loss = 1e-6;
  /// Test fixture: scale the analytic gradient of this group by 1.5.
  std::string corrupt_group;
};

struct AuditGroup {
  std::string name;
  int samples = 0;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct AuditReport {
  std::vector<AuditGroup> groups;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed = true;
};

/// Compares analytic and central finite-difference gradients of the total
/// loss on a small synthetic instance, sampling entries from every
/// parameter group.
AuditReport audit_gradients(const ModelConfig& model_config, std::uint64_t seed,
                            const AuditOptions& options = {});

}  // namespace mmkgl
