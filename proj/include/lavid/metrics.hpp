#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/error.hpp"
#include "lavid/inference.hpp"
#include "lavid/selection.hpp"

namespace lavid {

/// Confusion counts indexed [truth][prediction] with 0 = real, 1 = ai.
using Confusion = std::array<std::array<std::int64_t, 2>, 2>;

struct EvalReport {
  std::string dataset;
  std::int64_t n_real = 0;  // distinct samples
  std::int64_t n_ai = 0;
  std::int64_t n_verdicts = 0;  // over all runs; equals the confusion total
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double refusal_rate = 0;
  double mean_tools_per_video = 0;
  Confusion confusion{};
  int runs = 1;

  bool operator==(const EvalReport&) const = default;
};

struct SampleTruth {
  GroundTruth label = GroundTruth::Real;
  std::string source;
};

inline constexpr std::string_view kOverallDataset = "overall";

namespace detail {

struct RunMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, refusal_rate = 0, tools = 0;
};

inline RunMetrics run_metrics(const std::vector<const EnsembleVerdict*>& verdicts,
                              const std::map<std::string, SampleTruth>& truths) {
  std::int64_t tp = 0, fp = 0, fn = 0, correct = 0, calls = 0, refused = 0, tools = 0;
  for (const auto* v : verdicts) {
    const auto truth = truths.at(v->sample_id).label;
    correct += v->final == truth;
    tp += v->final == GroundTruth::Real && truth == GroundTruth::Real;
    fp += v->final == GroundTruth::Real && truth == GroundTruth::Ai;
    fn += v->final == GroundTruth::Ai && truth == GroundTruth::Real;
    for (const auto& d : v->per_tool) {
      ++calls;
      refused += d.refused;
    }
    tools += static_cast<std::int64_t>(v->tools_used.size());
  }
  RunMetrics m;
  const auto n = static_cast<double>(verdicts.size());
  m.accuracy = ratio(static_cast<double>(correct), n);
  m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
  m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
  m.refusal_rate = ratio(static_cast<double>(refused), static_cast<double>(calls));
  m.tools = ratio(static_cast<double>(tools), n);
  return m;
}

inline EvalReport build_report(std::string name, const std::vector<const EnsembleVerdict*>& verdicts,
                               const std::map<std::string, SampleTruth>& truths) {
  EvalReport r;
  r.dataset = std::move(name);
  std::map<int, std::vector<const EnsembleVerdict*>> by_run;
  std::set<std::string> real_ids, ai_ids;
  for (const auto* v : verdicts) {
    const auto truth = truths.at(v->sample_id).label;
    (truth == GroundTruth::Real ? real_ids : ai_ids).insert(v->sample_id);
    r.confusion[truth == GroundTruth::Ai][v->final == GroundTruth::Ai] += 1;
    by_run[v->run].push_back(v);
  }
  r.n_real = static_cast<std::int64_t>(real_ids.size());
  r.n_ai = static_cast<std::int64_t>(ai_ids.size());
  r.n_verdicts = static_cast<std::int64_t>(verdicts.size());
  r.runs = static_cast<int>(by_run.size());
  for (const auto& [run, vs] : by_run) {
    const auto m = run_metrics(vs, truths);
    r.accuracy += m.accuracy;
    r.precision += m.precision;
    r.recall += m.recall;
    r.f1 += m.f1;
    r.refusal_rate += m.refusal_rate;
    r.mean_tools_per_video += m.tools;
  }
  if (r.runs > 0) {
    const double k = r.runs;
    r.accuracy /= k;
    r.precision /= k;
    r.recall /= k;
    r.f1 /= k;
    r.refusal_rate /= k;
    r.mean_tools_per_video /= k;
  }
  return r;
}

}  // namespace detail

/// Per-source reports (sorted by source) followed by the overall report. F1
/// is unweighted with real as the positive class; with several runs every
/// rate is the mean of the per-run values.
inline std::vector<EvalReport> evaluate(const std::vector<EnsembleVerdict>& verdicts,
                                        const std::map<std::string, SampleTruth>& truths) {
  std::map<std::string, std::vector<const EnsembleVerdict*>> by_source;
  std::vector<const EnsembleVerdict*> all;
  for (const auto& v : verdicts) {
    const auto it = truths.find(v.sample_id);
    if (it == truths.end()) throw Error(ErrorCode::MissingTruth, "no ground truth for " + v.sample_id);
    by_source[it->second.source].push_back(&v);
    all.push_back(&v);
  }
  std::vector<EvalReport> out;
  for (const auto& [source, vs] : by_source) out.push_back(detail::build_report(source, vs, truths));
  out.push_back(detail::build_report(std::string(kOverallDataset), all, truths));
  return out;
}

inline std::map<std::string, SampleTruth> truths_from_manifest(const std::vector<VideoSample>& samples) {
  std::map<std::string, SampleTruth> out;
  for (const auto& s : samples) out[s.id] = {s.label, s.source};
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

/// "Accuracy/F1" in percent with two decimals, e.g. "93.00/93.46".
inline std::string format_cell(double accuracy, double f1) { return percent(accuracy) + "/" + percent(f1); }

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"dataset", r.dataset},
          {"n_real", r.n_real},
          {"n_ai", r.n_ai},
          {"n_verdicts", r.n_verdicts},
          {"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"refusal_rate", r.refusal_rate},
          {"mean_tools_per_video", r.mean_tools_per_video},
          {"confusion", r.confusion},
          {"runs", r.runs}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.n_real = j.at("n_real").get<std::int64_t>();
  r.n_ai = j.at("n_ai").get<std::int64_t>();
  r.n_verdicts = j.at("n_verdicts").get<std::int64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.refusal_rate = j.at("refusal_rate").get<double>();
  r.mean_tools_per_video = j.at("mean_tools_per_video").get<double>();
  r.confusion = j.at("confusion").get<Confusion>();
  r.runs = j.at("runs").get<int>();
  return r;
}

inline nlohmann::json reports_to_json(const std::vector<EvalReport>& reports) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return {{"reports", arr}};
}

inline constexpr std::string_view kCsvHeader =
    "dataset,n_real,n_ai,n_verdicts,accuracy,precision,recall,f1,refusal_rate,mean_tools_per_video,"
    "real_as_real,real_as_ai,ai_as_real,ai_as_ai,runs";

inline std::string render_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    os << r.dataset << ',' << r.n_real << ',' << r.n_ai << ',' << r.n_verdicts << ',' << num(r.accuracy) << ','
       << num(r.precision) << ',' << num(r.recall) << ',' << num(r.f1) << ',' << num(r.refusal_rate) << ','
       << num(r.mean_tools_per_video) << ',' << r.confusion[0][0] << ',' << r.confusion[0][1] << ','
       << r.confusion[1][0] << ',' << r.confusion[1][1] << ',' << r.runs << '\n';
  }
  return os.str();
}

inline std::vector<EvalReport> parse_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw Error(ErrorCode::Io, "unexpected report CSV header");
  std::vector<EvalReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 15) throw Error(ErrorCode::Io, "malformed report CSV row: " + line);
    EvalReport r;
    r.dataset = cells[0];
    r.n_real = std::stoll(cells[1]);
    r.n_ai = std::stoll(cells[2]);
    r.n_verdicts = std::stoll(cells[3]);
    r.accuracy = std::stod(cells[4]);
    r.precision = std::stod(cells[5]);
    r.recall = std::stod(cells[6]);
    r.f1 = std::stod(cells[7]);
    r.refusal_rate = std::stod(cells[8]);
    r.mean_tools_per_video = std::stod(cells[9]);
    r.confusion = {{{std::stoll(cells[10]), std::stoll(cells[11])}, {std::stoll(cells[12]), std::stoll(cells[13])}}};
    r.runs = std::stoi(cells[14]);
    out.push_back(r);
  }
  return out;
}

inline std::string render_text(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %6s %6s %13s %9s %11s %5s\n", "dataset", "real", "ai", "Accuracy/F1",
                "refusal", "tools/video", "runs");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-20s %6lld %6lld %13s %8s%% %11.2f %5d\n", r.dataset.c_str(),
                  static_cast<long long>(r.n_real), static_cast<long long>(r.n_ai),
                  format_cell(r.accuracy, r.f1).c_str(), percent(r.refusal_rate).c_str(), r.mean_tools_per_video,
                  r.runs);
    os << line;
  }
  return os.str();
}

/// Writes <stem>.json, <stem>.csv and <stem>.txt into `dir`.
inline void render_report(const std::vector<EvalReport>& reports, const std::filesystem::path& dir,
                          const std::string& stem = "eval_report") {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& ext, const std::string& body) {
    std::ofstream out(dir / (stem + ext), std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / (stem + ext)).string());
    out << body;
  };
  write(".json", reports_to_json(reports).dump(2) + "\n");
  write(".csv", render_csv(reports));
  write(".txt", render_text(reports));
}

}  // namespace lavid
