#pragma once

#include <stdexcept>
#include <vector>

#include "mmkgl/tensor.h"

namespace mmkgl {

class DegenerateGraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LaplacianOptions {
  int power_iterations = 100;
  double power_rel_tol = 1e-8;
  double lambda_floor = 1e-6;
};

struct LaplacianBundle {
  Tensor laplacian;  // I - D^-1/2 A_sym D^-1/2
  Tensor rescaled;   // 2 L / lambda_max - I
  Tensor lambda_max;  // 1 x 1
};

/// Symmetrizes the adjacency as (A + A^T) / 2 first; zero-degree nodes get
/// D^-1/2 = 0 so their Laplacian row is e_i. Differentiable in A, including
/// through lambda_max.
LaplacianBundle build_laplacian(const Tensor& adjacency, const LaplacianOptions& options = {});

/// sum_{i=0..k} T_i(L~) X W_i with T_0 = I, T_1 = L~,
/// T_i = 2 L~ T_{i-1} - T_{i-2}; k = weights.size() - 1. The recursion runs
/// on the propagated N x H features, never on dense polynomial matrices.
Tensor chebyshev_apply(const LaplacianBundle& bundle, const Tensor& features,
                       const std::vector<Tensor>& weights);

}  // namespace mmkgl
