#include "mmkgl/attention.h"

namespace mmkgl {

Mask neighbor_mask(const Matrix& adjacency, double threshold) {
  if (adjacency.rows() != adjacency.cols()) throw DimensionError("neighbor_mask needs a square matrix");
  Mask m = (adjacency.array() > threshold);
  for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, i) = true;
  return m;
}

Tensor attention_scores(const Tensor& features, const std::vector<AttentionHead>& heads,
                        const Mask& mask) {
  if (heads.empty()) throw ContractError("attention needs at least one head");
  const Eigen::Index n = features.rows();
  if (mask.rows() != n || mask.cols() != n)
    throw DimensionError("attention mask must be N x N");
  const Eigen::Index z = heads.front().psi.cols();
  Tensor total;
  for (const AttentionHead& h : heads) {
    if (h.psi.rows() != features.cols())
      throw DimensionError("attention: psi expects " + std::to_string(h.psi.rows()) +
                           " features, got " + std::to_string(features.cols()));
    if (h.psi.cols() != z || h.xi.rows() != 2 * z || h.xi.cols() != 1)
      throw DimensionError("attention: heads must share hidden width Z and xi must be 2Z x 1");
    Tensor hidden = matmul(features, h.psi);                          // N x Z
    Tensor source = matmul(hidden, slice_rows(h.xi, 0, z));           // N x 1
    Tensor target = transpose(matmul(hidden, slice_rows(h.xi, z, z)));  // 1 x N
    Tensor scores = leaky_relu(add(source, target), kAttentionSlope);
    Tensor weights = masked_softmax_rows(scores, mask);
    total = total.valid() ? add(total, weights) : weights;
  }
  return scale(total, 1.0 / static_cast<double>(heads.size()));
}

}  // namespace mmkgl
