#include "mmkgl/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmkgl/rng.h"

namespace mmkgl {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

double parse_number(std::string_view cell, const fs::path& file, std::size_t row, std::size_t col) {
  std::string t = trim(cell);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (t.empty() || ec != std::errc() || ptr != last) {
    std::ostringstream os;
    os << file.string() << ": row " << row + 1 << ", column " << col + 1
       << ": non-numeric cell '" << t << "'";
    throw LoadError(os.str());
  }
  return v;
}

std::vector<std::vector<double>> read_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string() + ": cannot open file");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      std::string_view cell(line.data() + start,
                            (comma == std::string::npos ? line.size() : comma) - start);
      row.push_back(parse_number(cell, file, rows.size(), row.size()));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      std::ostringstream os;
      os << file.string() << ": row " << rows.size() + 1 << " has " << row.size()
         << " columns, expected " << rows.front().size();
      throw LoadError(os.str());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_matrix_csv(const Matrix& m, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw LoadError(file.string() + ": cannot write file");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

ModalityKind parse_kind(const std::string& s, const fs::path& manifest) {
  if (s == "continuous") return ModalityKind::kContinuous;
  if (s == "discrete") return ModalityKind::kDiscrete;
  throw LoadError(manifest.string() + ": unknown modality kind '" + s + "'");
}

}  // namespace

// ---- Dataset --------------------------------------------------------------

void Dataset::validate() const {
  const int n = subjects();
  if (n == 0) throw LoadError("dataset has no subjects");
  if (classes < 2) throw LoadError("dataset needs at least 2 classes");
  for (int i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw LoadError("label range error: subject " + std::to_string(i + 1) + " has label " +
                      std::to_string(labels[i]) + " but classes = " + std::to_string(classes));
  bool any_continuous = false;
  for (const auto& m : modalities) {
    if (m.data.rows() != n)
      throw LoadError("row-count mismatch: modality '" + m.name + "' has " +
                      std::to_string(m.data.rows()) + " rows, expected " + std::to_string(n));
    if (m.continuous()) {
      any_continuous = true;
      for (Eigen::Index i = 0; i < m.data.rows(); ++i)
        for (Eigen::Index j = 0; j < m.data.cols(); ++j)
          if (!std::isfinite(m.data(i, j)))
            throw LoadError("modality '" + m.name + "': non-finite value at row " +
                            std::to_string(i + 1));
    } else {
      if (static_cast<Eigen::Index>(m.match.size()) != m.data.cols())
        throw LoadError("discrete modality '" + m.name + "' needs one match rule per column");
      for (const auto& r : m.match)
        if (r.type == MatchRule::Type::kThreshold && !(std::isfinite(r.theta) && r.theta > 0))
          throw LoadError("discrete modality '" + m.name +
                          "': threshold match needs a finite positive theta");
    }
  }
  if (!any_continuous) throw LoadError("dataset needs at least one continuous modality");
}

const ModalityMatrix& Dataset::modality(const std::string& name) const {
  for (const auto& m : modalities)
    if (m.name == name) return m;
  throw ConfigError("no modality named '" + name + "'");
}

bool Dataset::has_modality(const std::string& name) const {
  return std::any_of(modalities.begin(), modalities.end(),
                     [&](const ModalityMatrix& m) { return m.name == name; });
}

Dataset Dataset::select(const std::vector<std::string>& names) const {
  Dataset out;
  out.classes = classes;
  out.labels = labels;
  for (const auto& n : names) out.modalities.push_back(modality(n));
  return out;
}

// ---- file IO --------------------------------------------------------------

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError(manifest_path.string() + ": cannot open manifest");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  try {
    const int n = j.at("subjects").get<int>();
    ds.classes = j.at("classes").get<int>();
    const fs::path labels_file = base / j.at("labels").get<std::string>();
    auto label_rows = read_csv(labels_file);
    for (std::size_t r = 0; r < label_rows.size(); ++r) {
      double v = label_rows[r].at(0);
      if (label_rows[r].size() != 1 || v != std::floor(v))
        throw LoadError(labels_file.string() + ": row " + std::to_string(r + 1) +
                        ": expected one integer label");
      if (v < 0 || v >= ds.classes)
        throw LoadError(labels_file.string() + ": row " + std::to_string(r + 1) +
                        ": label range error (" + format_double(v) + " not in [0, " +
                        std::to_string(ds.classes) + "))");
      ds.labels.push_back(static_cast<int>(v));
    }
    if (static_cast<int>(ds.labels.size()) != n)
      throw LoadError(labels_file.string() + ": row-count mismatch: " +
                      std::to_string(ds.labels.size()) + " labels, manifest says " +
                      std::to_string(n));
    for (const auto& mj : j.at("modalities")) {
      ModalityMatrix m;
      m.name = mj.at("name").get<std::string>();
      m.kind = parse_kind(mj.at("kind").get<std::string>(), manifest_path);
      const fs::path file = base / mj.at("file").get<std::string>();
      auto rows = read_csv(file);
      if (static_cast<int>(rows.size()) != n)
        throw LoadError(file.string() + ": row-count mismatch: " + std::to_string(rows.size()) +
                        " rows, manifest says " + std::to_string(n) + " subjects");
      const std::size_t d = rows.empty() ? 0 : rows.front().size();
      m.data.resize(n, static_cast<Eigen::Index>(d));
      for (int r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) m.data(r, static_cast<Eigen::Index>(c)) = rows[r][c];
      if (!m.continuous()) {
        m.match.assign(d, MatchRule::exact());
        std::vector<bool> seen(d, false);
        if (mj.contains("match")) {
          for (const auto& rj : mj.at("match")) {
            const int col = rj.at("col").get<int>();
            if (col < 0 || static_cast<std::size_t>(col) >= d)
              throw LoadError(manifest_path.string() + ": modality '" + m.name +
                              "': match column " + std::to_string(col) + " out of range");
            const std::string type = rj.at("type").get<std::string>();
            if (type == "exact") {
              m.match[col] = MatchRule::exact();
            } else if (type == "threshold") {
              m.match[col] = MatchRule::threshold(rj.at("theta").get<double>());
            } else {
              throw LoadError(manifest_path.string() + ": unknown match type '" + type + "'");
            }
            seen[col] = true;
          }
        }
        if (mj.contains("match") && std::find(seen.begin(), seen.end(), false) != seen.end())
          throw LoadError(manifest_path.string() + ": modality '" + m.name +
                          "': every column needs a match descriptor");
      }
      ds.modalities.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& directory) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw LoadError(directory.string() + ": cannot create directory: " + ec.message());
  json j;
  j["subjects"] = dataset.subjects();
  j["classes"] = dataset.classes;
  j["labels"] = "labels.csv";
  j["modalities"] = json::array();
  for (const auto& m : dataset.modalities) {
    json mj;
    mj["name"] = m.name;
    mj["kind"] = m.continuous() ? "continuous" : "discrete";
    mj["file"] = m.name + ".csv";
    if (!m.continuous()) {
      mj["match"] = json::array();
      for (std::size_t c = 0; c < m.match.size(); ++c) {
        json r;
        r["col"] = c;
        if (m.match[c].type == MatchRule::Type::kExact) {
          r["type"] = "exact";
        } else {
          r["type"] = "threshold";
          r["theta"] = m.match[c].theta;
        }
        mj["match"].push_back(r);
      }
    }
    j["modalities"].push_back(mj);
    write_matrix_csv(m.data, directory / (m.name + ".csv"));
  }
  {
    std::ofstream out(directory / "labels.csv", std::ios::binary);
    if (!out) throw LoadError((directory / "labels.csv").string() + ": cannot write file");
    for (int l : dataset.labels) out << l << '\n';
  }
  std::ofstream out(directory / "manifest.json", std::ios::binary);
  if (!out) throw LoadError((directory / "manifest.json").string() + ": cannot write file");
  out << j.dump(2) << '\n';
}

// ---- synthetic data -------------------------------------------------------

void SynthConfig::validate() const {
  if (subjects < 10) throw ConfigError("synthetic data needs N >= 10 (got " + std::to_string(subjects) + ")");
  if (!(separation >= 0)) throw ConfigError("class separation must be >= 0");
  if (!(noise > 0)) throw ConfigError("noise must be > 0");
  if (dominant_features < 1 || weak_features < 1) throw ConfigError("feature counts must be >= 1");
  if (planted_features < 1 || planted_features > dominant_features)
    throw ConfigError("planted feature count must be in [1, dominant_features]");
  if (weak_planted < 1 || weak_planted > weak_features)
    throw ConfigError("weak planted count must be in [1, weak_features]");
  if (!(phenotype_agreement >= 0 && phenotype_agreement <= 1))
    throw ConfigError("phenotype agreement must be a probability");
  if (!(age_theta > 0)) throw ConfigError("age threshold must be > 0");
}

namespace {

std::vector<int> choose_columns(Rng& rng, int total, int count) {
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Class means +-separation/2 along the planted columns, so the distance
// between the two class means is `separation`.
Matrix gaussian_modality(Rng& rng, const std::vector<int>& labels, int features,
                         const std::vector<int>& informative, double separation, double noise) {
  const int n = static_cast<int>(labels.size());
  const double shift =
      separation / (2.0 * std::sqrt(static_cast<double>(informative.size())));
  Matrix x(n, features);
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < features; ++f) x(i, f) = rng.normal(0.0, noise);
  for (int i = 0; i < n; ++i) {
    const double sign = labels[i] == 1 ? 1.0 : -1.0;
    for (int f : informative) x(i, f) += sign * shift;
  }
  return x;
}

}  // namespace

std::vector<int> planted_features(const SynthConfig& config) {
  config.validate();
  Rng rng(substream_seed(config.seed, "synth", 1));
  return choose_columns(rng, config.dominant_features, config.planted_features);
}

Dataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  const int n = config.subjects;
  Dataset ds;
  ds.classes = 2;

  Rng label_rng(substream_seed(config.seed, "synth", 0));
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = i < n / 2 ? 0 : 1;
  label_rng.shuffle(ds.labels);

  const std::vector<int> planted = planted_features(config);
  Rng fc_rng(substream_seed(config.seed, "synth", 2));
  ds.modalities.push_back({"fc", ModalityKind::kContinuous,
                           gaussian_modality(fc_rng, ds.labels, config.dominant_features, planted,
                                             config.separation, config.noise),
                           {}});

  int stream = 3;
  for (const char* name : {"anat", "func"}) {
    Rng pick(substream_seed(config.seed, "synth", stream++));
    auto informative = choose_columns(pick, config.weak_features, config.weak_planted);
    Rng rng(substream_seed(config.seed, "synth", stream++));
    ds.modalities.push_back({name, ModalityKind::kContinuous,
                             gaussian_modality(rng, ds.labels, config.weak_features, informative,
                                               config.separation / 4.0, config.noise),
                             {}});
  }

  // Phenotype analog: every attribute follows the class with probability
  // `phenotype_agreement`. Age bands are separated by more than age_theta.
  Rng phe_rng(substream_seed(config.seed, "synth", stream));
  const double p = config.phenotype_agreement;
  const int band_width = 6;
  const int band_gap = static_cast<int>(std::ceil(config.age_theta)) + 1;
  Matrix phe(n, 3);
  for (int i = 0; i < n; ++i) {
    const int y = ds.labels[i];
    const int sex = phe_rng.bernoulli(p) ? y : 1 - y;
    const int site = phe_rng.bernoulli(p) ? y : 1 - y;
    const int band = phe_rng.bernoulli(p) ? y : 1 - y;
    const int age = 10 + band * (band_width + band_gap) + static_cast<int>(phe_rng.below(band_width));
    phe(i, 0) = sex;
    phe(i, 1) = site;
    phe(i, 2) = age;
  }
  ds.modalities.push_back({"phe", ModalityKind::kDiscrete, std::move(phe),
                           {MatchRule::exact(), MatchRule::exact(),
                            MatchRule::threshold(config.age_theta)}});
  ds.validate();
  return ds;
}

// ---- splits ---------------------------------------------------------------

std::vector<int> SplitPlan::fold_members(int fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(static_cast<int>(i));
  return out;
}

SplitPlan make_splits(const Dataset& dataset, int folds, std::uint64_t seed) {
  const int n = dataset.subjects();
  if (folds < 2) throw ConfigError("fold count must be >= 2");
  if (n < 2 * folds)
    throw ConfigError("need N >= 2K subjects (N = " + std::to_string(n) +
                      ", K = " + std::to_string(folds) + ")");
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[dataset.labels[i]].push_back(i);
  for (const auto& [label, members] : by_class)
    if (static_cast<int>(members.size()) < folds)
      throw StratificationError("class " + std::to_string(label) + " has " +
                                std::to_string(members.size()) + " members, fewer than K = " +
                                std::to_string(folds));

  // Deal shuffled class members round-robin; continuing the deal across
  // classes keeps fold sizes within one of each other.
  Rng rng(seed);
  SplitPlan plan;
  plan.folds = folds;
  plan.fold_of.assign(n, -1);
  int next = 0;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    for (int s : members) {
      plan.fold_of[s] = next;
      next = (next + 1) % folds;
    }
  }
  for (int r = 0; r < folds; ++r) {
    SplitRound round;
    const int val = (r + 1) % folds;
    for (int i = 0; i < n; ++i) {
      if (plan.fold_of[i] == r)
        round.test.push_back(i);
      else if (plan.fold_of[i] == val)
        round.validation.push_back(i);
      else
        round.train.push_back(i);
    }
    plan.rounds.push_back(std::move(round));
  }
  return plan;
}

}  // namespace mmkgl
