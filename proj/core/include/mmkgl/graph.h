#pragma once

// Population-graph construction from several modalities: one adaptive
// cosine graph per continuous modality, one attribute-match graph per
// discrete modality, and their Hadamard fusion.

#include <string>
#include <vector>

#include "mmkgl/data.h"
#include "mmkgl/tensor.h"

namespace mmkgl {

struct ModalGraph {
  std::string source;
  Tensor adjacency;  // N x N
};

/// A(i,j) = cos(x_i Theta, x_j Theta). Rows whose projection has norm
/// below 1e-12 get cosine 0 against every other subject and 1 on the
/// diagonal; their count is added to *zero_rows when non-null.
ModalGraph continuous_modal_graph(const std::string& source, const Tensor& features,
                                  const Tensor& projection, int* zero_rows = nullptr);

/// A(i,j) = number of attributes on which subjects i and j match.
Matrix discrete_modal_graph(const ModalityMatrix& modality);

/// mean(continuous) (Hadamard) mean(discrete). With no discrete graphs the
/// discrete factor is all-ones.
Tensor fuse(const std::vector<ModalGraph>& continuous, const std::vector<ModalGraph>& discrete);

/// Raw-feature cosine similarity; zero rows follow the same convention as
/// continuous_modal_graph.
Matrix build_function_graph(const Matrix& features, int* zero_rows = nullptr);

/// Regression targets for the modal graphs.
struct ReferenceGraphs {
  Matrix supervision;  // 1 where both subjects train and share a label
  Matrix function;     // raw cosine of the dominant modality
  Matrix train_pairs;  // 1 where both subjects train, else 0
  std::vector<bool> train_mask;
};

ReferenceGraphs build_reference_graphs(const std::vector<int>& labels,
                                       const std::vector<bool>& train_mask,
                                       const Matrix& dominant_features);

/// Sum over modalities of ||A - S_SG||^2 on training pairs plus
/// ||A - S_FG||^2 over all entries.
Tensor mmge_loss(const std::vector<ModalGraph>& continuous, const ReferenceGraphs& refs);

}  // namespace mmkgl
