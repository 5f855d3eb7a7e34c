#pragma once

// Subcommands of the mmkgl binary, kept in a library so tests can drive
// them without spawning processes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mmkgl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailed = 2 };

struct SynthOptions {
  int subjects = 200;
  double separation = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::filesystem::path out;
};

struct TrainOptions {
  std::filesystem::path data;  // manifest.json or the directory holding it
  std::vector<int> kernels{2, 3, 4};
  std::string fusion = "ckdt";
  bool no_ram = false;
  double threshold = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double learning_rate = 0.001;
  int max_epochs = 500;
  int patience = 50;
  int folds = 5;
  int repeats = 2;
  std::uint64_t seed = 1;
  std::vector<std::string> modalities;  // empty: all
  std::filesystem::path out;
};

struct SaliencyOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;  // empty: the dataset recorded in the checkpoint
  std::vector<int> top_k{10};
  std::filesystem::path mapping;
  int regions = 0;  // > 0: label features as upper-triangle region pairs
  std::filesystem::path out;
};

struct AuditOptions {
  std::uint64_t seed = 7;
  std::string inject_fault;  // parameter group whose gradient gets corrupted
  std::filesystem::path out;   // optional report file
};

nlohmann::json to_json(const SynthOptions& o);
nlohmann::json to_json(const TrainOptions& o);
nlohmann::json to_json(const SaliencyOptions& o);
nlohmann::json to_json(const AuditOptions& o);
SynthOptions synth_options_from(const nlohmann::json& j);
TrainOptions train_options_from(const nlohmann::json& j);
SaliencyOptions saliency_options_from(const nlohmann::json& j);
AuditOptions audit_options_from(const nlohmann::json& j);

/// Written as run_manifest.json into every run directory. `options` holds
/// the fully resolved flags, so replaying it needs nothing else.
struct RunManifest {
  std::string command;
  nlohmann::json options;
  std::uint64_t seed = 0;
  std::string version;
  std::string started;   // UTC, ISO 8601
  std::string finished;
  std::vector<std::string> outputs;
};

inline constexpr const char* kManifestName = "run_manifest.json";

void write_manifest(const RunManifest& manifest, const std::filesystem::path& directory);
RunManifest read_manifest(const std::filesystem::path& path);

/// git describe of the source tree at configure time.
std::string version_string();

// Each command writes human-readable progress to `log` and returns an
// ExitCode. Errors in the inputs surface as exceptions; run_command maps
// them to exit codes.
int cmd_synth(const SynthOptions& o, std::ostream& log);
int cmd_train(const TrainOptions& o, std::ostream& log);
int cmd_saliency(const SaliencyOptions& o, std::ostream& log);
int cmd_audit(const AuditOptions& o, std::ostream& log);
/// Re-runs the command recorded in a manifest, into `out` when given.
int cmd_replay(const std::filesystem::path& manifest,
               const std::optional<std::filesystem::path>& out, std::ostream& log);

/// Full command line entry point (argv[0] included).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmkgl::cli
