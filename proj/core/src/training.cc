#include "mmkgl/training.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "mmkgl/rng.h"

namespace mmkgl {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss weights must be >= 0");
}

// ---- metrics --------------------------------------------------------------

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  if (scores.empty()) throw ContractError("metrics need at least one evaluated subject");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= 0.5;
    const bool actual = labels[i] == 1;
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  Metrics m;
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.sen = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.spe = tn + fp ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;

  // Mann-Whitney: sort by score, average ranks over ties.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives > 0 && negatives > 0) {
    const double p = static_cast<double>(positives);
    m.auc = (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
  }
  return m;
}

MetricSummary summarize(std::span<const Metrics> metrics) {
  MetricSummary s;
  if (metrics.empty()) return s;
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  std::vector<double> acc, sen, spe, auc;
  for (const Metrics& m : metrics) {
    acc.push_back(m.acc);
    sen.push_back(m.sen);
    spe.push_back(m.spe);
    if (m.auc) auc.push_back(*m.auc);
  }
  stats(acc, s.mean.acc, s.std.acc);
  stats(sen, s.mean.sen, s.std.sen);
  stats(spe, s.mean.spe, s.std.spe);
  if (!auc.empty()) {
    double mean = 0.0, sd = 0.0;
    stats(auc, mean, sd);
    s.mean.auc = mean;
    s.std.auc = sd;
  }
  return s;
}

// ---- early stopping / optimizer -------------------------------------------

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double accuracy, double loss) {
  const bool better = best_epoch_ < 0 || accuracy > best_acc_ ||
                      (accuracy == best_acc_ && loss < best_loss_);
  if (better) {
    best_epoch_ = epoch;
    best_acc_ = accuracy;
    best_loss_ = loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return better;
}

void MomentumSgd::step(const std::vector<Parameter*>& params) {
  if (velocity_.empty())
    for (const Parameter* p : params) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  if (velocity_.size() != params.size()) throw ContractError("optimizer parameter set changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + params[i]->grad;
    params[i]->value -= lr_ * velocity_[i];
  }
}

// ---- training -------------------------------------------------------------

namespace {

std::vector<bool> to_mask(const std::vector<int>& subjects, int n) {
  std::vector<bool> mask(n, false);
  for (int s : subjects) {
    if (s < 0 || s >= n) throw ContractError("subject index out of range in split");
    mask[s] = true;
  }
  return mask;
}

std::vector<double> class1_scores(const Tensor& probs) {
  std::vector<double> s(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) s[i] = probs.value()(i, 1);
  return s;
}

Metrics metrics_on(const std::vector<double>& scores, const std::vector<int>& labels,
                   const std::vector<int>& subjects) {
  std::vector<double> s;
  std::vector<int> y;
  for (int i : subjects) {
    s.push_back(scores[i]);
    y.push_back(labels[i]);
  }
  return compute_metrics(s, y);
}

}  // namespace

std::vector<double> predict(Model& model, const PreparedData& data) {
  Tape tape;
  ForwardPass fp = model.forward(tape, data);
  return class1_scores(fp.fusion.probs);
}

Metrics evaluate(Model& model, const PreparedData& data, const std::vector<int>& subjects) {
  return metrics_on(predict(model, data), data.labels, subjects);
}

FoldResult train_fold(const Dataset& dataset, const SplitRound& round,
                      const ModelConfig& model_config, const TrainConfig& train_config) {
  return train_fold(prepare(dataset, model_config), round, model_config, train_config);
}

FoldResult train_fold(const PreparedData& data, const SplitRound& round,
                      const ModelConfig& model_config, const TrainConfig& train_config) {
  train_config.validate();
  if (data.classes != 2) throw ConfigError("training and metrics support two classes");
  const int n = data.subjects();
  const std::vector<bool> train_mask = to_mask(round.train, n);
  const std::vector<bool> val_mask = to_mask(round.validation, n);
  if (round.train.empty() || round.validation.empty() || round.test.empty())
    throw ContractError("split round needs non-empty train, validation and test sets");

  const ReferenceGraphs refs = build_reference_graphs(data.labels, train_mask, data.dominant_features());
  Model model(model_config, data, train_config.seed);
  MomentumSgd optimizer(train_config.learning_rate, train_config.momentum);
  EarlyStopping stopper(train_config.patience);

  FoldResult result;
  Checkpoint best;
  Tape tape;
  for (int epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    tape.reset();
    model.zero_grad();
    ForwardPass fp = model.forward(tape, data);
    Tensor l_mmge = train_config.lambda1 > 0 ? mmge_loss(fp.continuous_graphs, refs) : tape.scalar(0.0);
    Tensor l_mk = train_config.lambda2 > 0 ? branch_losses(fp.branch_probs, data.labels, train_mask)
                                           : tape.scalar(0.0);
    Tensor l_f = fusion_loss(fp.fusion.probs, data.labels, train_mask);
    Tensor loss = total_loss(l_mmge, l_mk, l_f, train_config.lambda1, train_config.lambda2,
                             train_config.lambda3);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                            ": total loss is " + std::to_string(value));
    result.train_losses.push_back(value);

    // Validation on the same (pre-update) parameters.
    const Metrics val = metrics_on(class1_scores(fp.fusion.probs), data.labels, round.validation);
    const double val_loss = [&] {
      const Matrix& p = fp.fusion.probs.value();
      double l = 0.0;
      for (int i : round.validation) {
        double q = std::clamp(data.labels[i] == 1 ? p(i, 1) : 1.0 - p(i, 1), kProbabilityEps,
                              1.0 - kProbabilityEps);
        l -= std::log(q);
      }
      return l;
    }();
    if (stopper.update(epoch, val.acc, val_loss)) {
      best = capture(model);
      best.epoch = epoch;
      best.validation_accuracy = val.acc;
      result.validation = val;
      result.best_validation_loss = val_loss;
    }
    result.epochs_run = epoch + 1;
    if (stopper.should_stop()) break;

    tape.backward(loss);
    optimizer.step(model.parameters());
  }

  restore(best, model);
  best.train = round.train;
  best.validation = round.validation;
  best.test = round.test;
  result.best_epoch = best.epoch;
  result.test = evaluate(model, data, round.test);
  result.checkpoint = std::move(best);
  return result;
}

// ---- cross-validation -----------------------------------------------------

int worker_count() {
  if (const char* env = std::getenv("MMKGL_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

CrossValidationResult cross_validate(const Dataset& dataset, const CrossValidationConfig& cv,
                                     const ModelConfig& model_config,
                                     const TrainConfig& train_config) {
  if (cv.repeats < 1) throw ConfigError("repeats must be >= 1");
  train_config.validate();
  const PreparedData data = prepare(dataset, model_config);

  struct Job {
    int repeat;
    int fold;
    SplitRound round;
  };
  std::vector<Job> jobs;
  for (int r = 0; r < cv.repeats; ++r) {
    SplitPlan plan = make_splits(dataset, cv.folds, substream_seed(cv.seed, "split", r));
    for (int f = 0; f < cv.folds; ++f) jobs.push_back({r, f, plan.rounds[f]});
  }

  std::vector<FoldResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        TrainConfig tc = train_config;
        tc.seed = substream_seed(cv.seed, "init",
                                 static_cast<std::uint64_t>(jobs[j].repeat * cv.folds + jobs[j].fold));
        results[j] = train_fold(data, jobs[j].round, model_config, tc);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int threads = std::min<int>(cv.threads > 0 ? cv.threads : worker_count(),
                                    static_cast<int>(jobs.size()));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  CrossValidationResult out;
  std::vector<Metrics> tests;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    FoldRecord rec;
    rec.repeat = jobs[j].repeat;
    rec.fold = jobs[j].fold;
    rec.test = results[j].test;
    rec.validation = results[j].validation;
    rec.best_epoch = results[j].best_epoch;
    rec.epochs_run = results[j].epochs_run;
    tests.push_back(rec.test);
    out.folds.push_back(rec);
    out.checkpoints.push_back(std::move(results[j].checkpoint));
  }
  out.summary = summarize(tests);
  return out;
}

// ---- gradient audit -------------------------------------------------------

AuditReport audit_gradients(const ModelConfig& model_config, std::uint64_t seed,
                            const AuditOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.subjects = options.subjects;
  sc.dominant_features = 20;
  sc.planted_features = 5;
  sc.weak_features = 8;
  sc.weak_planted = 4;
  sc.seed = substream_seed(seed, "synth");
  const Dataset ds = generate_synthetic(sc);
  const PreparedData data = prepare(ds, model_config);
  const int folds = std::max(2, std::min(5, options.subjects / 2 / 2));
  const SplitPlan plan = make_splits(ds, folds, substream_seed(seed, "split"));
  const std::vector<bool> train_mask = to_mask(plan.rounds[0].train, data.subjects());
  const ReferenceGraphs refs = build_reference_graphs(data.labels, train_mask, data.dominant_features());
  Model model(model_config, data, substream_seed(seed, "init"));

  auto loss_value = [&](Tape& tape) {
    ForwardPass fp = model.forward(tape, data);
    Tensor l = total_loss(mmge_loss(fp.continuous_graphs, refs),
                          branch_losses(fp.branch_probs, data.labels, train_mask),
                          fusion_loss(fp.fusion.probs, data.labels, train_mask), 1.0, 1.0, 1.0);
    return l;
  };

  model.zero_grad();
  double base_loss = 0.0;
  {
    Tape tape;
    Tensor l = loss_value(tape);
    base_loss = l.item();
    tape.backward(l);
  }
  if (!options.corrupt_group.empty())
    for (Parameter* p : model.parameters())
      if (Model::group_of(p->name) == options.corrupt_group) p->grad *= 1.5;

  // Group -> candidate (parameter, flat index) pairs.
  std::map<std::string, std::vector<std::pair<Parameter*, Eigen::Index>>> groups;
  std::vector<std::string> order;
  for (Parameter* p : model.parameters()) {
    const std::string g = Model::group_of(p->name);
    if (!groups.count(g)) order.push_back(g);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) groups[g].push_back({p, i});
  }

  AuditReport report;
  report.tolerance = options.tolerance;
  Rng rng(substream_seed(seed, "audit"));
  for (const std::string& g : order) {
    auto& candidates = groups[g];
    rng.shuffle(candidates);
    const std::size_t count = std::min<std::size_t>(candidates.size(),
                                                    static_cast<std::size_t>(options.samples_per_group));
    AuditGroup ag;
    ag.name = g;
    for (std::size_t s = 0; s < count; ++s) {
      auto [p, idx] = candidates[s];
      const double analytic = p->grad.data()[idx];
      const double original = p->value.data()[idx];
      double f[2];
      for (int side = 0; side < 2; ++side) {
        p->value.data()[idx] = original + (side == 0 ? options.step : -options.step);
        Tape tape;
        f[side] = loss_value(tape).item();
      }
      p->value.data()[idx] = original;
      const double numeric = (f[0] - f[1]) / (2.0 * options.step);
      // The difference quotient resolves about eps * |loss| / step in
      // absolute terms; the floor keeps gradients near that level (or exactly
      // zero) from reading as large relative errors.
      const double floor = options.floor_per_loss * std::max(1.0, std::abs(base_loss));
      const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / scale;
      ag.max_relative_error = std::max(ag.max_relative_error, rel);
      ++ag.samples;
    }
    ag.passed = ag.max_relative_error <= options.tolerance;
    report.passed = report.passed && ag.passed;
    report.groups.push_back(ag);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mmkgl
