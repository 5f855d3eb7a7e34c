#include "mmkgl/saliency.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mmkgl {
namespace fs = std::filesystem;

std::vector<double> compute_saliency(Model& model, const PreparedData& data) {
  Tape tape;
  ForwardPass fp = model.forward(tape, data, /*track_input=*/true);
  const Matrix& logits = fp.fusion.logits.value();
  const Eigen::Index n = logits.rows();
  const Eigen::Index features = fp.dominant_input.cols();
  std::vector<double> scores(static_cast<std::size_t>(features), 0.0);
  Matrix seed = Matrix::Zero(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index predicted = 0;
    fp.fusion.logits.value().row(i).maxCoeff(&predicted);
    seed.setZero();
    seed(i, predicted) = 1.0;
    tape.zero_grad();
    tape.backward(fp.fusion.logits, seed);
    const Matrix& g = fp.dominant_input.grad();
    if (g.size() == 0) continue;
    for (Eigen::Index f = 0; f < features; ++f) scores[f] += std::abs(g(i, f));
  }
  for (double& s : scores) s /= static_cast<double>(n);
  return scores;
}

std::pair<int, int> upper_triangle_pair(int index, int regions) {
  if (regions < 2 || index < 0 || index >= regions * (regions - 1) / 2)
    throw std::out_of_range("feature index outside the upper triangle");
  int a = 0;
  int remaining = index;
  while (remaining >= regions - 1 - a) {
    remaining -= regions - 1 - a;
    ++a;
  }
  return {a, a + 1 + remaining};
}

SaliencyReport top_k_report(std::span<const double> scores, int k, const IndexLabels* labels,
                            int regions) {
  if (k <= 0) throw std::invalid_argument("top-k needs K > 0");
  if (static_cast<std::size_t>(k) > scores.size())
    throw std::invalid_argument("top-k: K = " + std::to_string(k) + " exceeds the " +
                                std::to_string(scores.size()) + " features");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(k));

  double total = 0.0;
  for (int i : order) total += scores[i];
  SaliencyReport report;
  report.k = k;
  for (std::size_t r = 0; r < order.size(); ++r) {
    SaliencyEntry e;
    e.rank = static_cast<int>(r) + 1;
    e.index = order[r];
    e.raw = scores[order[r]];
    e.percent = total > 0 ? 100.0 * e.raw / total : 100.0 / static_cast<double>(k);
    if (regions > 0) e.pair = upper_triangle_pair(e.index, regions);
    if (labels != nullptr && labels->count(e.index)) {
      e.label = labels->at(e.index);
    } else if (e.pair) {
      e.label = std::to_string(e.pair->first) + "-" + std::to_string(e.pair->second);
    } else {
      e.label = std::to_string(e.index);
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

IndexLabels load_index_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open mapping file");
  IndexLabels out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) +
                               ": expected index,label");
    int index = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + comma, index);
    if (ec != std::errc() || ptr != line.data() + comma) {
      if (row == 1) continue;  // header
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) +
                               ": non-integer index");
    }
    out[index] = line.substr(comma + 1);
  }
  return out;
}

void write_report_json(const SaliencyReport& report, const fs::path& path) {
  nlohmann::json j;
  j["k"] = report.k;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json ej = {{"rank", e.rank}, {"index", e.index}, {"label", e.label},
                         {"raw", e.raw},   {"percent", e.percent}};
    if (e.pair) ej["pair"] = {e.pair->first, e.pair->second};
    j["entries"].push_back(ej);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write report");
  out << j.dump(2) << '\n';
}

void write_report_csv(const SaliencyReport& report, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write report");
  out << "rank,feature,raw,percent\n";
  char buf[64];
  for (const auto& e : report.entries) {
    out << e.rank << ',' << e.label << ',';
    auto r = std::to_chars(buf, buf + sizeof(buf), e.raw);
    out.write(buf, r.ptr - buf);
    out << ',';
    r = std::to_chars(buf, buf + sizeof(buf), e.percent);
    out.write(buf, r.ptr - buf);
    out << '\n';
  }
}

}  // namespace mmkgl
