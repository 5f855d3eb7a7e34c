#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "mmkgl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = mmkgl::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mmkgl_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kQuickTrain{"--folds", "3", "--repeats", "1", "--epochs", "3",
                                           "--kernels", "1,2"};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    std::string err;
    CHECK(run({}, nullptr, &err) == mmkgl::cli::kUsage);
    CHECK(run({"frobnicate"}) == mmkgl::cli::kUsage);
    CHECK(run({"synth"}) == mmkgl::cli::kUsage);  // --out is required
    CHECK(run({"synth", "--n", "5", "--out", scratch_dir("tiny").string()}, nullptr, &err) ==
          mmkgl::cli::kUsage);
    CHECK(err.find("N >= 10") != std::string::npos);
    CHECK(run({"train", "--data", scratch_dir("absent").string(), "--out", scratch_dir("x").string()}) ==
          mmkgl::cli::kUsage);
    CHECK(run({"--help"}) == mmkgl::cli::kOk);
  }

  TEST_CASE("audit exit codes") {
    std::string out;
    CHECK(run({"audit"}, &out) == mmkgl::cli::kOk);
    CHECK(out.find("audit passed") != std::string::npos);
    CHECK(run({"audit", "--inject-fault", "psi"}, &out) == mmkgl::cli::kFailed);
    CHECK(out.find("psi") != std::string::npos);
    CHECK(run({"audit", "--inject-fault", "gamma"}) == mmkgl::cli::kUsage);

    fs::path dir = scratch_dir("audit");
    CHECK(run({"audit", "--out", dir.string()}) == mmkgl::cli::kOk);
    json report = json::parse(read_all(dir / "audit.json"));
    CHECK(report.at("passed") == true);
    CHECK(report.at("groups").size() == 5);
    CHECK(fs::exists(dir / mmkgl::cli::kManifestName));
  }

  TEST_CASE("synth, train, saliency and replay") {
    fs::path root = scratch_dir("pipeline");
    fs::path data = root / "data", runs = root / "run";
    REQUIRE(run({"synth", "--n", "20", "--seed", "3", "--out", data.string()}) == mmkgl::cli::kOk);
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "fc.csv"));

    std::vector<std::string> train{"train", "--data", data.string(), "--out", runs.string()};
    train.insert(train.end(), kQuickTrain.begin(), kQuickTrain.end());
    std::string table;
    REQUIRE(run(train, &table) == mmkgl::cli::kOk);
    CHECK(table.find("ACC") != std::string::npos);
    json metrics = json::parse(read_all(runs / "metrics.json"));
    CHECK(metrics.at("folds").size() == 3);
    CHECK(metrics.at("mean").contains("acc"));
    CHECK(fs::exists(runs / "checkpoints" / "repeat0_fold1.json"));

    mmkgl::cli::RunManifest m = mmkgl::cli::read_manifest(runs / mmkgl::cli::kManifestName);
    CHECK(m.command == "train");
    CHECK(m.options.at("lr") == 0.001);
    CHECK_FALSE(m.version.empty());
    CHECK_FALSE(m.started.empty());

    fs::path ckpt = runs / "checkpoints" / "repeat0_fold0.json";
    REQUIRE(run({"saliency", "--checkpoint", ckpt.string(), "--top-k", "5,10"}) == mmkgl::cli::kOk);
    fs::path sal = runs / "checkpoints";
    CHECK(fs::exists(sal / "saliency_top5.csv"));
    json top10 = json::parse(read_all(sal / "saliency_top10.json"));
    CHECK(top10.at("entries").size() == 10);

    // Replays reproduce the metric and report files byte for byte.
    fs::path again = root / "again";
    REQUIRE(run({"replay", (runs / mmkgl::cli::kManifestName).string(), "--out", again.string()}) ==
            mmkgl::cli::kOk);
    CHECK(read_all(again / "metrics.json") == read_all(runs / "metrics.json"));

    fs::path sal_again = root / "sal_again";
    REQUIRE(run({"replay", (sal / mmkgl::cli::kManifestName).string(), "--out", sal_again.string()}) ==
            mmkgl::cli::kOk);
    CHECK(read_all(sal_again / "saliency_top10.json") == read_all(sal / "saliency_top10.json"));

    fs::path data_again = root / "data_again";
    REQUIRE(run({"replay", (data / mmkgl::cli::kManifestName).string(), "--out", data_again.string()}) ==
            mmkgl::cli::kOk);
    CHECK(read_all(data_again / "fc.csv") == read_all(data / "fc.csv"));
  }

  TEST_CASE("tampered checkpoints are refused") {
    fs::path root = scratch_dir("tamper");
    fs::path data = root / "data", runs = root / "run";
    REQUIRE(run({"synth", "--n", "20", "--out", data.string()}) == mmkgl::cli::kOk);
    std::vector<std::string> train{"train", "--data", (data / "manifest.json").string(), "--out", runs.string()};
    train.insert(train.end(), kQuickTrain.begin(), kQuickTrain.end());
    REQUIRE(run(train) == mmkgl::cli::kOk);
    fs::path ckpt = runs / "checkpoints" / "repeat0_fold0.json";
    json j = json::parse(read_all(ckpt));
    j.erase("hash");
    std::ofstream(ckpt) << j.dump();
    std::string err;
    CHECK(run({"saliency", "--checkpoint", ckpt.string()}, nullptr, &err) == mmkgl::cli::kFailed);
    CHECK(err.find("hash") != std::string::npos);
  }

  TEST_CASE("options survive a json round trip") {
    mmkgl::cli::TrainOptions t;
    t.kernels = {1, 3};
    t.no_ram = true;
    t.modalities = {"fc", "phe"};
    t.seed = 12345678901234ULL;
    mmkgl::cli::TrainOptions back = mmkgl::cli::train_options_from(mmkgl::cli::to_json(t));
    CHECK(back.kernels == t.kernels);
    CHECK(back.no_ram);
    CHECK(back.modalities == t.modalities);
    CHECK(back.seed == t.seed);
    CHECK(mmkgl::cli::to_json(back) == mmkgl::cli::to_json(t));
  }
}
