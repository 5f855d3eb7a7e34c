#include "mmkgl/network.h"

#include <cmath>

#include "mmkgl/rng.h"

namespace mmkgl {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kCkdt: return "ckdt";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kAdd: return "add";
    case FusionMode::kWeight: return "weight";
    case FusionMode::kAvg: return "avg";
  }
  return "ckdt";
}

FusionMode parse_fusion_mode(const std::string& name) {
  for (FusionMode m : {FusionMode::kCkdt, FusionMode::kConcat, FusionMode::kAdd,
                       FusionMode::kWeight, FusionMode::kAvg})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown fusion mode '" + name + "' (expected ckdt, concat, add, weight, avg)");
}

void ModelConfig::validate() const {
  if (kernel_orders.empty()) throw ConfigError("at least one kernel order is required");
  for (int k : kernel_orders)
    if (k < 0) throw ConfigError("kernel orders must be >= 0");
  if (hidden_width < 1 || projection_width < 1) throw ConfigError("widths must be >= 1");
  if (ram_heads < 1 || ram_hidden < 1) throw ConfigError("attention needs >= 1 head and width");
  if (!std::isfinite(ram_threshold)) throw ConfigError("attention threshold must be finite");
  if (age_theta && !(*age_theta > 0)) throw ConfigError("age_theta must be > 0");
}

PreparedData prepare(const Dataset& dataset, const ModelConfig& config) {
  config.validate();
  dataset.validate();
  std::vector<std::string> names = config.modalities;
  if (names.empty())
    for (const auto& m : dataset.modalities) names.push_back(m.name);
  PreparedData out;
  out.labels = dataset.labels;
  out.classes = dataset.classes;
  out.dominant = -1;
  for (const auto& name : names) {
    ModalityMatrix m = dataset.modality(name);
    if (m.continuous()) {
      if (name == config.dominant_modality) out.dominant = static_cast<int>(out.continuous.size());
      out.continuous_names.push_back(name);
      out.continuous.push_back(m.data);
    } else {
      if (config.age_theta)
        for (auto& r : m.match)
          if (r.type == MatchRule::Type::kThreshold) r.theta = *config.age_theta;
      out.discrete_names.push_back(name);
      out.discrete_graphs.push_back(discrete_modal_graph(m));
    }
  }
  if (out.dominant < 0)
    throw ConfigError("dominant modality '" + config.dominant_modality +
                      "' must be a selected continuous modality");
  return out;
}

// ---- building blocks ------------------------------------------------------

Tensor branch_forward(const std::vector<Tensor>& layer1, const std::vector<Tensor>& layer2,
                      const LaplacianBundle& bundle, const Tensor& features) {
  Tensor hidden = leaky_relu(chebyshev_apply(bundle, features, layer1), kAttentionSlope);
  return softmax_rows(chebyshev_apply(bundle, hidden, layer2));
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                     const std::vector<bool>& mask) {
  const Eigen::Index n = probs.rows();
  const Eigen::Index t = probs.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(mask.size()) != n)
    throw DimensionError("cross_entropy: label / mask length differs from prediction rows");
  Tape& tape = *probs.tape();
  int count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("cross_entropy: empty training set");

  if (t == 2) {
    Matrix y = Matrix::Zero(n, 1);
    Matrix not_y = Matrix::Zero(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      (labels[i] == 1 ? y : not_y)(i, 0) = 1.0;
    }
    Tensor p1 = clamp(slice_cols(probs, 1, 1), kProbabilityEps, 1.0 - kProbabilityEps);
    Tensor p0 = clamp(add_scalar(neg(slice_cols(probs, 1, 1)), 1.0), kProbabilityEps,
                      1.0 - kProbabilityEps);
    Tensor ll = add(sum(mul(log(p1), tape.constant(std::move(y)))),
                    sum(mul(log(p0), tape.constant(std::move(not_y)))));
    return neg(ll);
  }
  Matrix select = Matrix::Zero(n, t);
  for (Eigen::Index i = 0; i < n; ++i)
    if (mask[i]) select(i, labels[i]) = 1.0;
  Tensor lp = log(clamp(probs, kProbabilityEps, 1.0 - kProbabilityEps));
  return neg(sum(mul(lp, tape.constant(std::move(select)))));
}

Tensor branch_losses(const std::vector<Tensor>& branch_probs, const std::vector<int>& labels,
                     const std::vector<bool>& mask) {
  if (branch_probs.empty()) throw ContractError("branch_losses needs at least one branch");
  Tensor total;
  for (const Tensor& p : branch_probs) {
    Tensor l = cross_entropy(p, labels, mask);
    total = total.valid() ? add(total, l) : l;
  }
  return total;
}

Tensor build_ckdt(const std::vector<Tensor>& branch_probs) {
  if (branch_probs.empty()) throw ContractError("CKDT needs at least one branch");
  const Eigen::Index t = branch_probs.front().cols();
  Tensor tensor = branch_probs.front();
  for (std::size_t k = 1; k < branch_probs.size(); ++k) {
    if (branch_probs[k].cols() != t)
      throw DimensionError("CKDT: branch " + std::to_string(k + 1) + " has " +
                           std::to_string(branch_probs[k].cols()) + " classes, expected " +
                           std::to_string(t));
    tensor = row_outer(tensor, branch_probs[k]);
  }
  return tensor;
}

FusionOutput fusion_forward(const Tensor& fused_input, const Tensor& weight, const Tensor& bias) {
  if (fused_input.cols() != weight.rows())
    throw DimensionError("fusion head expects width " + std::to_string(weight.rows()) + ", got " +
                         std::to_string(fused_input.cols()));
  FusionOutput out;
  out.logits = add(matmul(fused_input, weight), bias);
  out.probs = softmax_rows(out.logits);
  return out;
}

Tensor fusion_loss(const Tensor& probs, const std::vector<int>& labels,
                   const std::vector<bool>& mask) {
  return cross_entropy(probs, labels, mask);
}

Tensor total_loss(const Tensor& mmge, const Tensor& multi_kernel, const Tensor& fusion,
                  double lambda1, double lambda2, double lambda3) {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw ConfigError("loss weights must be >= 0");
  return add(add(scale(mmge, lambda1), scale(multi_kernel, lambda2)), scale(fusion, lambda3));
}

// ---- Model ----------------------------------------------------------------

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

double glorot(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Eigen::Index pow_int(Eigen::Index base, std::size_t exp) {
  Eigen::Index r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

std::vector<Tensor> bind(Tape& tape, std::vector<Parameter>& ps) {
  std::vector<Tensor> out;
  out.reserve(ps.size());
  for (auto& p : ps) out.push_back(tape.parameter(p));
  return out;
}

}  // namespace

Model::Model(const ModelConfig& config, const PreparedData& data, std::uint64_t seed)
    : config_(config), classes_(data.classes) {
  config_.validate();
  Rng rng(seed);
  for (std::size_t v = 0; v < data.continuous.size(); ++v) {
    const Eigen::Index d = data.continuous[v].cols();
    thetas_.emplace_back("theta." + data.continuous_names[v],
                         uniform_matrix(rng, d, config_.projection_width,
                                        1.0 / std::sqrt(static_cast<double>(d))));
  }
  const Eigen::Index f = data.dominant_features().cols();
  if (config_.ram_enabled) {
    for (int q = 0; q < config_.ram_heads; ++q) {
      psi_.emplace_back("psi." + std::to_string(q),
                        uniform_matrix(rng, f, config_.ram_hidden, glorot(f, config_.ram_hidden)));
      xi_.emplace_back("xi." + std::to_string(q),
                       uniform_matrix(rng, 2 * config_.ram_hidden, 1,
                                      glorot(2 * config_.ram_hidden, 1)));
    }
  }
  const Eigen::Index t = data.classes;
  for (std::size_t b = 0; b < config_.kernel_orders.size(); ++b) {
    const int k = config_.kernel_orders[b];
    std::vector<Parameter> l1;
    std::vector<Parameter> l2;
    // Split the Glorot range across the k+1 polynomial terms.
    const double s1 = glorot(f, config_.hidden_width) / std::sqrt(k + 1.0);
    const double s2 = glorot(config_.hidden_width, t) / std::sqrt(k + 1.0);
    for (int i = 0; i <= k; ++i)
      l1.emplace_back("branch." + std::to_string(b) + ".l1.w" + std::to_string(i),
                      uniform_matrix(rng, f, config_.hidden_width, s1));
    for (int i = 0; i <= k; ++i)
      l2.emplace_back("branch." + std::to_string(b) + ".l2.w" + std::to_string(i),
                      uniform_matrix(rng, config_.hidden_width, t, s2));
    layer1_.push_back(std::move(l1));
    layer2_.push_back(std::move(l2));
  }
  const std::size_t kb = config_.kernel_orders.size();
  Eigen::Index in = t;
  if (config_.fusion == FusionMode::kCkdt) in = pow_int(t, kb);
  if (config_.fusion == FusionMode::kConcat) in = t * static_cast<Eigen::Index>(kb);
  fusion_weight_ = Parameter("fusion.w", uniform_matrix(rng, in, t, glorot(in, t)));
  fusion_bias_ = Parameter("fusion.b", Matrix::Zero(1, t));
  if (config_.fusion == FusionMode::kWeight)
    mix_ = Parameter("fusion.mix", Matrix::Zero(1, static_cast<Eigen::Index>(kb)));
}

ForwardPass Model::forward(Tape& tape, const PreparedData& data, bool track_input) {
  if (data.continuous.size() != thetas_.size())
    throw ConfigError("model was built for a different modality set");
  ForwardPass fp;
  fp.dominant_input = track_input ? tape.variable(data.dominant_features())
                                  : tape.constant(data.dominant_features());

  for (std::size_t v = 0; v < data.continuous.size(); ++v) {
    Tensor x = static_cast<int>(v) == data.dominant ? fp.dominant_input
                                                    : tape.constant(data.continuous[v]);
    fp.continuous_graphs.push_back(continuous_modal_graph(
        data.continuous_names[v], x, tape.parameter(thetas_[v]), &fp.zero_projection_rows));
  }
  std::vector<ModalGraph> discrete;
  for (std::size_t v = 0; v < data.discrete_graphs.size(); ++v)
    discrete.push_back({data.discrete_names[v], tape.constant(data.discrete_graphs[v])});
  fp.fused = fuse(fp.continuous_graphs, discrete);
  fp.mask = neighbor_mask(fp.fused.value(), config_.ram_threshold);

  if (config_.ram_enabled) {
    std::vector<AttentionHead> heads;
    for (std::size_t q = 0; q < psi_.size(); ++q)
      heads.push_back({tape.parameter(psi_[q]), tape.parameter(xi_[q])});
    fp.adjacency = attention_scores(fp.dominant_input, heads, fp.mask);
  } else {
    // Without attention the thresholded fused graph is used directly;
    // negative similarities are dropped so the Laplacian stays valid.
    Matrix keep = (fp.mask && (fp.fused.value().array() > 0.0)).cast<double>().matrix();
    fp.adjacency = mul(fp.fused, tape.constant(std::move(keep)));
  }
  fp.laplacian = build_laplacian(fp.adjacency);

  for (std::size_t b = 0; b < layer1_.size(); ++b)
    fp.branch_probs.push_back(branch_forward(bind(tape, layer1_[b]), bind(tape, layer2_[b]),
                                             fp.laplacian, fp.dominant_input));

  Tensor head_input;
  const double kb = static_cast<double>(fp.branch_probs.size());
  switch (config_.fusion) {
    case FusionMode::kCkdt:
      head_input = build_ckdt(fp.branch_probs);
      break;
    case FusionMode::kConcat:
      head_input = hconcat(fp.branch_probs);
      break;
    case FusionMode::kAdd:
    case FusionMode::kAvg: {
      Tensor s = fp.branch_probs.front();
      for (std::size_t b = 1; b < fp.branch_probs.size(); ++b) s = add(s, fp.branch_probs[b]);
      head_input = config_.fusion == FusionMode::kAvg ? scale(s, 1.0 / kb) : s;
      break;
    }
    case FusionMode::kWeight: {
      Tensor w = softmax_rows(tape.parameter(mix_));  // 1 x K
      for (std::size_t b = 0; b < fp.branch_probs.size(); ++b) {
        Tensor term = mul(fp.branch_probs[b], slice_cols(w, static_cast<Eigen::Index>(b), 1));
        head_input = head_input.valid() ? add(head_input, term) : term;
      }
      break;
    }
  }
  fp.fusion = fusion_forward(head_input, tape.parameter(fusion_weight_),
                             tape.parameter(fusion_bias_));
  return fp;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : thetas_) out.push_back(&p);
  for (std::size_t q = 0; q < psi_.size(); ++q) {
    out.push_back(&psi_[q]);
    out.push_back(&xi_[q]);
  }
  for (std::size_t b = 0; b < layer1_.size(); ++b) {
    for (auto& p : layer1_[b]) out.push_back(&p);
    for (auto& p : layer2_[b]) out.push_back(&p);
  }
  out.push_back(&fusion_weight_);
  out.push_back(&fusion_bias_);
  if (config_.fusion == FusionMode::kWeight) out.push_back(&mix_);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

Parameter* Model::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::string Model::group_of(const std::string& name) {
  return name.substr(0, name.find('.'));
}

}  // namespace mmkgl
