#include "mmkgl/spectral.h"

namespace mmkgl {

LaplacianBundle build_laplacian(const Tensor& adjacency, const LaplacianOptions& options) {
  const Matrix& a = adjacency.value();
  if (a.rows() != a.cols()) throw DimensionError("adjacency must be square");
  Tape& tape = *adjacency.tape();
  const Eigen::Index n = a.rows();

  Tensor sym = scale(add(adjacency, transpose(adjacency)), 0.5);
  if ((sym.value().array() < 0.0).any())
    throw DomainError("Laplacian needs a nonnegative adjacency after symmetrization");
  if ((sym.value().array() == 0.0).all())
    throw DegenerateGraphError("all-zero adjacency: the graph has no edges");

  Tensor inv_sqrt_degree = rsqrt_or_zero(row_sum(sym));  // N x 1
  Tensor normalized = mul(mul(sym, inv_sqrt_degree), transpose(inv_sqrt_degree));
  Tensor identity = tape.constant(Matrix::Identity(n, n));

  LaplacianBundle b;
  b.laplacian = sub(identity, normalized);
  b.lambda_max = lambda_max(b.laplacian, options.power_iterations, options.power_rel_tol,
                            options.lambda_floor);
  b.rescaled = sub(div(scale(b.laplacian, 2.0), b.lambda_max), identity);
  return b;
}

Tensor chebyshev_apply(const LaplacianBundle& bundle, const Tensor& features,
                       const std::vector<Tensor>& weights) {
  if (weights.empty()) throw DimensionError("chebyshev_apply needs k+1 >= 1 weight matrices");
  const Tensor& lt = bundle.rescaled;
  if (lt.cols() != features.rows())
    throw DimensionError("chebyshev_apply: graph has " + std::to_string(lt.rows()) +
                         " nodes but features have " + std::to_string(features.rows()) + " rows");
  const Eigen::Index out_cols = weights.front().cols();
  for (const Tensor& w : weights)
    if (w.rows() != features.cols() || w.cols() != out_cols)
      throw DimensionError("chebyshev_apply: every W_i must be " +
                           std::to_string(features.cols()) + "x" + std::to_string(out_cols));

  Tensor prev = features;  // T_0 X
  Tensor out = matmul(prev, weights[0]);
  if (weights.size() == 1) return out;
  Tensor cur = matmul(lt, features);  // T_1 X
  out = add(out, matmul(cur, weights[1]));
  for (std::size_t i = 2; i < weights.size(); ++i) {
    Tensor next = sub(scale(matmul(lt, cur), 2.0), prev);
    out = add(out, matmul(next, weights[i]));
    prev = cur;
    cur = next;
  }
  return out;
}

}  // namespace mmkgl
