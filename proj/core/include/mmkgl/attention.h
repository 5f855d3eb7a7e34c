#pragma once

// Multi-head relational attention over a thresholded population graph.

#include <vector>

#include "mmkgl/tensor.h"

namespace mmkgl {

inline constexpr double kAttentionSlope = 0.2;

/// Trainable tensors of one attention head: psi (F x Z) and xi (2Z x 1).
struct AttentionHead {
  Tensor psi;
  Tensor xi;
};

/// mask(i,j) = A(i,j) > threshold, plus every self-loop.
Mask neighbor_mask(const Matrix& adjacency, double threshold);

/// Per head: R(i,j) = LeakyReLU_0.2(xi^T [psi^T f_i ; psi^T f_j]) on masked
/// pairs, softmax along each row over the mask. Returns the mean over heads,
/// which is row-stochastic and exactly zero off the mask.
Tensor attention_scores(const Tensor& features, const std::vector<AttentionHead>& heads,
                        const Mask& mask);

}  // namespace mmkgl
