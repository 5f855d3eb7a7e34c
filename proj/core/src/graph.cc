#include "mmkgl/graph.h"

#include <cmath>

namespace mmkgl {
namespace {

constexpr double kZeroNorm = 1e-12;

}  // namespace

ModalGraph continuous_modal_graph(const std::string& source, const Tensor& features,
                                  const Tensor& projection, int* zero_rows) {
  if (features.cols() != projection.rows())
    throw DimensionError("modality '" + source + "': projection expects " +
                         std::to_string(projection.rows()) + " features, got " +
                         std::to_string(features.cols()));
  Tape& tape = *features.tape();
  Tensor projected = matmul_ordered(features, projection);
  Tensor unit = normalize_rows(projected, kZeroNorm);
  Tensor cosine = matmul_ordered(unit, transpose(unit));

  Matrix self_fix = Matrix::Zero(cosine.rows(), cosine.cols());
  int zeros = 0;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    if (unit.value().row(i).squaredNorm() == 0.0) {
      self_fix(i, i) = 1.0;
      ++zeros;
    }
  }
  if (zero_rows != nullptr) *zero_rows += zeros;
  if (zeros > 0) cosine = add(cosine, tape.constant(std::move(self_fix)));
  return {source, cosine};
}

Matrix discrete_modal_graph(const ModalityMatrix& modality) {
  if (modality.continuous())
    throw ContractError("modality '" + modality.name + "' is not discrete");
  if (static_cast<Eigen::Index>(modality.match.size()) != modality.data.cols())
    throw ContractError("modality '" + modality.name + "' lacks a match rule per column");
  const Matrix& p = modality.data;
  const Eigen::Index n = p.rows();
  Matrix a = Matrix::Zero(n, n);
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    const MatchRule& rule = modality.match[static_cast<std::size_t>(c)];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        bool hit = rule.type == MatchRule::Type::kExact ? p(i, c) == p(j, c)
                                                        : std::abs(p(i, c) - p(j, c)) < rule.theta;
        if (hit) a(i, j) += 1.0;
      }
    }
  }
  return a;
}

Tensor fuse(const std::vector<ModalGraph>& continuous, const std::vector<ModalGraph>& discrete) {
  if (continuous.empty()) throw ContractError("fuse needs at least one continuous graph");
  const Eigen::Index n = continuous.front().adjacency.rows();
  auto check = [n](const ModalGraph& g) {
    if (g.adjacency.rows() != n || g.adjacency.cols() != n)
      throw DimensionError("graph '" + g.source + "' is " + std::to_string(g.adjacency.rows()) +
                           "x" + std::to_string(g.adjacency.cols()) + ", expected " +
                           std::to_string(n) + "x" + std::to_string(n));
  };
  Tensor c_sum = continuous.front().adjacency;
  check(continuous.front());
  for (std::size_t v = 1; v < continuous.size(); ++v) {
    check(continuous[v]);
    c_sum = add(c_sum, continuous[v].adjacency);
  }
  Tensor c_mean = scale(c_sum, 1.0 / static_cast<double>(continuous.size()));
  if (discrete.empty()) return c_mean;

  Tensor d_sum = discrete.front().adjacency;
  check(discrete.front());
  for (std::size_t v = 1; v < discrete.size(); ++v) {
    check(discrete[v]);
    d_sum = add(d_sum, discrete[v].adjacency);
  }
  Tensor d_mean = scale(d_sum, 1.0 / static_cast<double>(discrete.size()));
  return mul(c_mean, d_mean);
}

Matrix build_function_graph(const Matrix& features, int* zero_rows) {
  const Eigen::Index n = features.rows();
  Matrix unit = features;
  int zeros = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm = features.row(i).norm();
    if (norm < kZeroNorm) {
      unit.row(i).setZero();
      ++zeros;
    } else {
      unit.row(i) /= norm;
    }
  }
  Matrix s(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double dot = 0.0;
      for (Eigen::Index f = 0; f < unit.cols(); ++f) dot += unit(i, f) * unit(j, f);
      s(i, j) = dot;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (unit.row(i).squaredNorm() == 0.0) s(i, i) = 1.0;
  if (zero_rows != nullptr) *zero_rows += zeros;
  return s;
}

ReferenceGraphs build_reference_graphs(const std::vector<int>& labels,
                                       const std::vector<bool>& train_mask,
                                       const Matrix& dominant_features) {
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  if (static_cast<Eigen::Index>(train_mask.size()) != n || dominant_features.rows() != n)
    throw DimensionError("reference graphs: subject counts disagree");
  ReferenceGraphs refs;
  refs.train_mask = train_mask;
  refs.supervision = Matrix::Zero(n, n);
  refs.train_pairs = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!train_mask[i]) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!train_mask[j]) continue;
      refs.train_pairs(i, j) = 1.0;
      if (labels[i] == labels[j]) refs.supervision(i, j) = 1.0;
    }
  }
  refs.function = build_function_graph(dominant_features);
  return refs;
}

Tensor mmge_loss(const std::vector<ModalGraph>& continuous, const ReferenceGraphs& refs) {
  if (continuous.empty()) throw ContractError("mmge_loss needs at least one continuous graph");
  if (refs.train_pairs.sum() == 0.0) throw ContractError("mmge_loss: empty training set");
  Tape& tape = *continuous.front().adjacency.tape();
  Tensor s_sg = tape.constant(refs.supervision);
  Tensor s_fg = tape.constant(refs.function);
  Tensor pairs = tape.constant(refs.train_pairs);
  Tensor total;
  for (const ModalGraph& g : continuous) {
    Tensor r_sg = mul(sub(g.adjacency, s_sg), pairs);
    Tensor r_fg = sub(g.adjacency, s_fg);
    Tensor term = add(sum(mul(r_sg, r_sg)), sum(mul(r_fg, r_fg)));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

}  // namespace mmkgl
