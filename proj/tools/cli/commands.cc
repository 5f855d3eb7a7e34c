#include "commands.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "mmkgl/checkpoint.h"
#include "mmkgl/data.h"
#include "mmkgl/saliency.h"
#include "mmkgl/training.h"

#ifndef MMKGL_GIT_DESCRIBE
#define MMKGL_GIT_DESCRIBE "unknown"
#endif

namespace mmkgl::cli {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json metrics_json(const Metrics& m) {
  return {{"acc", m.acc},
          {"sen", m.sen},
          {"spe", m.spe},
          {"auc", m.auc ? json(*m.auc) : json(nullptr)}};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << j.dump(2) << '\n';
}

fs::path resolve_manifest(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.json" : data;
}

void require_out(const fs::path& out, const char* command) {
  if (out.empty()) throw ConfigError(std::string(command) + ": --out is required");
  fs::create_directories(out);
}

const std::vector<std::string> kGroups{"theta", "psi", "xi", "branch", "fusion"};

}  // namespace

// ---- option serialization --------------------------------------------------

json to_json(const SynthOptions& o) {
  return {{"n", o.subjects},
          {"separation", o.separation},
          {"noise", o.noise},
          {"seed", o.seed},
          {"out", o.out.string()}};
}

SynthOptions synth_options_from(const json& j) {
  SynthOptions o;
  o.subjects = j.at("n").get<int>();
  o.separation = j.at("separation").get<double>();
  o.noise = j.at("noise").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.out = j.at("out").get<std::string>();
  return o;
}

json to_json(const TrainOptions& o) {
  return {{"data", o.data.string()},
          {"kernels", o.kernels},
          {"fusion", o.fusion},
          {"no_ram", o.no_ram},
          {"threshold", o.threshold},
          {"lambda1", o.lambda1},
          {"lambda2", o.lambda2},
          {"lambda3", o.lambda3},
          {"lr", o.learning_rate},
          {"epochs", o.max_epochs},
          {"patience", o.patience},
          {"folds", o.folds},
          {"repeats", o.repeats},
          {"seed", o.seed},
          {"modalities", o.modalities},
          {"out", o.out.string()}};
}

TrainOptions train_options_from(const json& j) {
  TrainOptions o;
  o.data = j.at("data").get<std::string>();
  o.kernels = j.at("kernels").get<std::vector<int>>();
  o.fusion = j.at("fusion").get<std::string>();
  o.no_ram = j.at("no_ram").get<bool>();
  o.threshold = j.at("threshold").get<double>();
  o.lambda1 = j.at("lambda1").get<double>();
  o.lambda2 = j.at("lambda2").get<double>();
  o.lambda3 = j.at("lambda3").get<double>();
  o.learning_rate = j.at("lr").get<double>();
  o.max_epochs = j.at("epochs").get<int>();
  o.patience = j.at("patience").get<int>();
  o.folds = j.at("folds").get<int>();
  o.repeats = j.at("repeats").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.modalities = j.at("modalities").get<std::vector<std::string>>();
  o.out = j.at("out").get<std::string>();
  return o;
}

json to_json(const SaliencyOptions& o) {
  return {{"checkpoint", o.checkpoint.string()},
          {"data", o.data.string()},
          {"top_k", o.top_k},
          {"mapping", o.mapping.string()},
          {"regions", o.regions},
          {"out", o.out.string()}};
}

SaliencyOptions saliency_options_from(const json& j) {
  SaliencyOptions o;
  o.checkpoint = j.at("checkpoint").get<std::string>();
  o.data = j.at("data").get<std::string>();
  o.top_k = j.at("top_k").get<std::vector<int>>();
  o.mapping = j.at("mapping").get<std::string>();
  o.regions = j.at("regions").get<int>();
  o.out = j.at("out").get<std::string>();
  return o;
}

json to_json(const AuditOptions& o) {
  return {{"seed", o.seed}, {"inject_fault", o.inject_fault}, {"out", o.out.string()}};
}

AuditOptions audit_options_from(const json& j) {
  AuditOptions o;
  o.seed = j.at("seed").get<std::uint64_t>();
  o.inject_fault = j.at("inject_fault").get<std::string>();
  o.out = j.at("out").get<std::string>();
  return o;
}

// ---- manifest ---------------------------------------------------------------

std::string version_string() { return MMKGL_GIT_DESCRIBE; }

void write_manifest(const RunManifest& m, const fs::path& directory) {
  fs::create_directories(directory);
  write_json({{"command", m.command},
              {"options", m.options},
              {"seed", m.seed},
              {"version", m.version},
              {"started", m.started},
              {"finished", m.finished},
              {"outputs", m.outputs}},
             directory / kManifestName);
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": run manifest not found");
  RunManifest m;
  try {
    json j;
    in >> j;
    m.command = j.at("command").get<std::string>();
    m.options = j.at("options");
    m.seed = j.value("seed", std::uint64_t{0});
    m.version = j.value("version", std::string());
    m.started = j.value("started", std::string());
    m.finished = j.value("finished", std::string());
    m.outputs = j.value("outputs", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed run manifest: " + e.what());
  }
  return m;
}

// ---- commands ---------------------------------------------------------------

int cmd_synth(const SynthOptions& o, std::ostream& log) {
  RunManifest manifest{"synth", to_json(o), o.seed, version_string(), utc_now(), {}, {}};
  SynthConfig config;
  config.subjects = o.subjects;
  config.separation = o.separation;
  config.noise = o.noise;
  config.seed = o.seed;
  config.validate();
  require_out(o.out, "synth");

  const Dataset ds = generate_synthetic(config);
  save_dataset(ds, o.out);
  manifest.outputs = {"manifest.json", "labels.csv"};
  for (const auto& m : ds.modalities) manifest.outputs.push_back(m.name + ".csv");
  manifest.finished = utc_now();
  write_manifest(manifest, o.out);
  log << "wrote " << ds.subjects() << " subjects, " << ds.modalities.size() << " modalities to "
      << o.out.string() << '\n';
  return kOk;
}

int cmd_train(const TrainOptions& o, std::ostream& log) {
  RunManifest manifest{"train", to_json(o), o.seed, version_string(), utc_now(), {}, {}};
  ModelConfig model;
  model.kernel_orders = o.kernels;
  model.fusion = parse_fusion_mode(o.fusion);
  model.ram_enabled = !o.no_ram;
  model.ram_threshold = o.threshold;
  model.modalities = o.modalities;
  model.validate();
  TrainConfig train;
  train.learning_rate = o.learning_rate;
  train.max_epochs = o.max_epochs;
  train.patience = o.patience;
  train.lambda1 = o.lambda1;
  train.lambda2 = o.lambda2;
  train.lambda3 = o.lambda3;
  train.validate();
  CrossValidationConfig cv;
  cv.folds = o.folds;
  cv.repeats = o.repeats;
  cv.seed = o.seed;
  if (cv.repeats < 1) throw ConfigError("repeats must be >= 1");
  require_out(o.out, "train");
  if (model.fusion == FusionMode::kCkdt && model.kernel_orders.size() == 1)
    log << "warning: CKDT fusion with a single kernel is the identity on that branch\n";

  const fs::path data = fs::absolute(resolve_manifest(o.data));
  const Dataset ds = load_dataset(data);
  const CrossValidationResult result = cross_validate(ds, cv, model, train);

  json folds = json::array();
  for (const auto& f : result.folds) {
    json fj = metrics_json(f.test);
    fj["repeat"] = f.repeat;
    fj["fold"] = f.fold;
    fj["best_epoch"] = f.best_epoch;
    fj["epochs_run"] = f.epochs_run;
    fj["validation"] = metrics_json(f.validation);
    folds.push_back(fj);
  }
  json config = json::parse(model_config_to_json(model));
  config["train"] = {{"lr", train.learning_rate},   {"momentum", train.momentum},
                     {"epochs", train.max_epochs},  {"patience", train.patience},
                     {"lambda1", train.lambda1},    {"lambda2", train.lambda2},
                     {"lambda3", train.lambda3}};
  config["cv"] = {{"folds", cv.folds}, {"repeats", cv.repeats}, {"seed", cv.seed}};
  config["subjects"] = ds.subjects();
  write_json({{"folds", folds},
              {"mean", metrics_json(result.summary.mean)},
              {"std", metrics_json(result.summary.std)},
              {"config", config}},
             o.out / "metrics.json");
  manifest.outputs.push_back("metrics.json");

  fs::create_directories(o.out / "checkpoints");
  for (std::size_t i = 0; i < result.folds.size(); ++i) {
    Checkpoint c = result.checkpoints[i];
    c.dataset = data.string();
    const std::string name = "checkpoints/repeat" + std::to_string(result.folds[i].repeat) +
                             "_fold" + std::to_string(result.folds[i].fold) + ".json";
    save_checkpoint(c, o.out / name);
    manifest.outputs.push_back(name);
  }
  manifest.finished = utc_now();
  write_manifest(manifest, o.out);

  const auto& mean = result.summary.mean;
  const auto& sd = result.summary.std;
  log << result.folds.size() << " folds, " << ds.subjects() << " subjects\n"
      << "metric  mean    std\n"
      << "ACC     " << fixed(mean.acc) << "  " << fixed(sd.acc) << '\n'
      << "AUC     " << (mean.auc ? fixed(*mean.auc) : std::string("  n/a ")) << "  "
      << (sd.auc ? fixed(*sd.auc) : std::string("n/a")) << '\n'
      << "SEN     " << fixed(mean.sen) << "  " << fixed(sd.sen) << '\n'
      << "SPE     " << fixed(mean.spe) << "  " << fixed(sd.spe) << '\n';
  return kOk;
}

int cmd_saliency(const SaliencyOptions& o, std::ostream& log) {
  RunManifest manifest{"saliency", to_json(o), 0, version_string(), utc_now(), {}, {}};
  if (o.top_k.empty()) throw ConfigError("saliency: --top-k needs at least one value");
  const Checkpoint checkpoint = load_checkpoint(o.checkpoint);
  const fs::path data = o.data.empty() ? fs::path(checkpoint.dataset) : resolve_manifest(o.data);
  if (data.empty()) throw ConfigError("saliency: checkpoint names no dataset; pass --data");
  const Dataset ds = load_dataset(data);
  const PreparedData prepared = prepare(ds, checkpoint.model);
  Model model(checkpoint.model, prepared, 0);
  restore(checkpoint, model);

  IndexLabels labels;
  if (!o.mapping.empty()) labels = load_index_labels(o.mapping);
  const fs::path out = o.out.empty() ? o.checkpoint.parent_path() : o.out;
  fs::create_directories(out.empty() ? fs::path(".") : out);

  const std::vector<double> scores = compute_saliency(model, prepared);
  for (int k : o.top_k) {
    const SaliencyReport report =
        top_k_report(scores, k, o.mapping.empty() ? nullptr : &labels, o.regions);
    const std::string stem = "saliency_top" + std::to_string(k);
    write_report_json(report, out / (stem + ".json"));
    write_report_csv(report, out / (stem + ".csv"));
    manifest.outputs.push_back(stem + ".json");
    manifest.outputs.push_back(stem + ".csv");
    log << "top " << k << '\n' << "rank  feature              percent\n";
    for (const auto& e : report.entries)
      log << std::setw(4) << e.rank << "  " << std::left << std::setw(20) << e.label << std::right
          << ' ' << std::setw(7) << fixed(e.percent, 2) << '\n';
  }
  manifest.finished = utc_now();
  write_manifest(manifest, out.empty() ? fs::path(".") : out);
  return kOk;
}

int cmd_audit(const AuditOptions& o, std::ostream& log) {
  RunManifest manifest{"audit", to_json(o), o.seed, version_string(), utc_now(), {}, {}};
  if (!o.inject_fault.empty() &&
      std::find(kGroups.begin(), kGroups.end(), o.inject_fault) == kGroups.end())
    throw ConfigError("--inject-fault: unknown parameter group '" + o.inject_fault + "'");
  mmkgl::AuditOptions options;
  options.corrupt_group = o.inject_fault;
  const AuditReport report = audit_gradients(ModelConfig{}, o.seed, options);

  json groups = json::array();
  log << "group    samples  max rel. error  status\n";
  for (const auto& g : report.groups) {
    groups.push_back({{"group", g.name},
                      {"samples", g.samples},
                      {"max_relative_error", g.max_relative_error},
                      {"passed", g.passed}});
    char line[96];
    std::snprintf(line, sizeof(line), "%-8s %7d  %14.3e  %s\n", g.name.c_str(), g.samples,
                  g.max_relative_error, g.passed ? "ok" : "FAIL");
    log << line;
  }
  log << (report.passed ? "audit passed" : "audit FAILED") << " (tolerance "
      << report.tolerance << ", " << fixed(report.seconds, 1) << " s)\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_json({{"seed", o.seed},
                {"tolerance", report.tolerance},
                {"passed", report.passed},
                {"groups", groups}},
               o.out / "audit.json");
    manifest.outputs.push_back("audit.json");
    manifest.finished = utc_now();
    write_manifest(manifest, o.out);
  }
  return report.passed ? kOk : kFailed;
}

int cmd_replay(const fs::path& path, const std::optional<fs::path>& out, std::ostream& log) {
  const RunManifest m = read_manifest(path);
  json options = m.options;
  if (out) options["out"] = out->string();
  log << "replaying " << m.command << " from " << path.string() << '\n';
  try {
    if (m.command == "synth") return cmd_synth(synth_options_from(options), log);
    if (m.command == "train") return cmd_train(train_options_from(options), log);
    if (m.command == "saliency") return cmd_saliency(saliency_options_from(options), log);
    if (m.command == "audit") return cmd_audit(audit_options_from(options), log);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": bad options: " + e.what());
  }
  throw ConfigError(path.string() + ": unknown command '" + m.command + "'");
}

// ---- argument parsing -------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal multi-kernel graph learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--n", synth.subjects, "Subjects")->capture_default_str();
  s->add_option("--separation", synth.separation, "Class-mean distance, dominant modality")
      ->capture_default_str();
  s->add_option("--noise", synth.noise, "Noise standard deviation")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Cross-validated training");
  t->add_option("--data", train.data, "Dataset manifest or directory")->required();
  t->add_option("--kernels", train.kernels, "Chebyshev orders, e.g. 2,3,4")
      ->delimiter(',')
      ->capture_default_str();
  t->add_option("--fusion", train.fusion, "ckdt, concat, add, avg or weight")
      ->capture_default_str();
  t->add_flag("--no-ram", train.no_ram, "Disable relational attention");
  t->add_option("--threshold", train.threshold, "Neighbor threshold on the fused graph")
      ->capture_default_str();
  t->add_option("--lambda1", train.lambda1, "Graph embedding loss weight")->capture_default_str();
  t->add_option("--lambda2", train.lambda2, "Branch loss weight")->capture_default_str();
  t->add_option("--lambda3", train.lambda3, "Fusion loss weight")->capture_default_str();
  t->add_option("--lr", train.learning_rate)->capture_default_str();
  t->add_option("--epochs", train.max_epochs)->capture_default_str();
  t->add_option("--patience", train.patience)->capture_default_str();
  t->add_option("--folds", train.folds)->capture_default_str();
  t->add_option("--repeats", train.repeats)->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--modalities", train.modalities, "Subset, e.g. fc,phe")->delimiter(',');
  t->add_option("--out", train.out, "Run directory")->required();

  SaliencyOptions sal;
  auto* g = app.add_subcommand("saliency", "Top-K input-gradient feature report");
  g->add_option("--checkpoint", sal.checkpoint)->required();
  g->add_option("--data", sal.data, "Dataset (default: the one the checkpoint was trained on)");
  g->add_option("--top-k", sal.top_k, "One or more K, e.g. 10,20")
      ->delimiter(',')
      ->capture_default_str();
  g->add_option("--mapping", sal.mapping, "CSV of index,label");
  g->add_option("--regions", sal.regions, "Label features as region pairs of this many regions");
  g->add_option("--out", sal.out, "Output directory (default: next to the checkpoint)");

  AuditOptions audit;
  auto* a = app.add_subcommand("audit", "Finite-difference gradient audit");
  a->add_option("--seed", audit.seed)->capture_default_str();
  a->add_option("--inject-fault", audit.inject_fault,
                "Corrupt one group's gradient (theta, psi, xi, branch, fusion)");
  a->add_option("--out", audit.out, "Write audit.json and a run manifest here");

  fs::path replay_manifest;
  std::string replay_out;
  auto* r = app.add_subcommand("replay", "Re-run a command from its run manifest");
  r->add_option("manifest", replay_manifest)->required();
  r->add_option("--out", replay_out, "Output directory (default: the recorded one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (g->parsed()) return cmd_saliency(sal, out);
    if (a->parsed()) return cmd_audit(audit, out);
    if (r->parsed())
      return cmd_replay(replay_manifest,
                        replay_out.empty() ? std::nullopt : std::optional<fs::path>(replay_out),
                        out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace mmkgl::cli
