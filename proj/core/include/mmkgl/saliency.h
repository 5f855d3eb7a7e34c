#pragma once

// Gradient saliency of the dominant-modality input features.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmkgl/network.h"

namespace mmkgl {

/// score_f = mean_i |d logit_{yhat_i}(i) / d X[i][f]|, where yhat_i is the
/// predicted class of subject i and the logit is the fusion head's
/// pre-softmax output. One backward pass per subject.
std::vector<double> compute_saliency(Model& model, const PreparedData& data);

struct SaliencyEntry {
  int rank = 0;  // 1-based
  int index = 0;
  std::string label;                           // mapped name, or the index
  std::optional<std::pair<int, int>> pair;     // region pair for FC-style features
  double raw = 0.0;
  double percent = 0.0;
};

struct SaliencyReport {
  int k = 0;
  std::vector<SaliencyEntry> entries;  // by weight descending, ties by lower index
};

using IndexLabels = std::map<int, std::string>;

/// Top-k features by score with weights renormalized to sum to 100 among
/// the k reported. `regions` > 0 labels feature f with its upper-triangle
/// region pair (FC edge layout over `regions` regions).
SaliencyReport top_k_report(std::span<const double> scores, int k,
                            const IndexLabels* labels = nullptr, int regions = 0);

/// Feature index f -> (a, b), a < b, enumerating the strict upper triangle
/// of a regions x regions matrix row by row.
std::pair<int, int> upper_triangle_pair(int index, int regions);

/// CSV "index,label" lines; an optional header line is skipped.
IndexLabels load_index_labels(const std::filesystem::path& path);

void write_report_json(const SaliencyReport& report, const std::filesystem::path& path);
/// Columns: rank,feature,raw,percent.
void write_report_csv(const SaliencyReport& report, const std::filesystem::path& path);

}  // namespace mmkgl
