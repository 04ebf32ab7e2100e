#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/adaptation.hpp"
#include "lavid/config.hpp"
#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/inference.hpp"
#include "lavid/log.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/metrics.hpp"
#include "lavid/mock_lvlm.hpp"
#include "lavid/parallel.hpp"
#include "lavid/selection.hpp"

namespace lavid {

namespace artifacts {
inline constexpr std::string_view kPreparedManifest = "manifest.prepared.jsonl";
inline constexpr std::string_view kSplit = "split.json";
inline constexpr std::string_view kSelectionReport = "selection_report.json";
inline constexpr std::string_view kSelectionCheckpoint = "selection.checkpoint.json";
inline constexpr std::string_view kTemplates = "templates.json";
inline constexpr std::string_view kVerdicts = "verdicts.jsonl";
inline constexpr std::string_view kEvalStem = "eval_report";

inline std::string ledger(Tool t) { return "adaptation_" + std::string(tool_name(t)) + ".jsonl"; }
inline std::string checkpoint(Tool t) { return "adaptation_" + std::string(tool_name(t)) + ".checkpoint.json"; }
}  // namespace artifacts

/// Builds the provider for a run; the manifest is passed so a mock can learn
/// the labels it is meant to be right or wrong about.
using ProviderFactory =
    std::function<std::shared_ptr<Provider>(const PipelineConfig&, const std::vector<VideoSample>& manifest)>;

/// Reads a behaviour file; `default_seed` applies when the file has no seed.
inline MockBehavior load_mock_behavior(const std::filesystem::path& path, std::uint64_t default_seed = 0) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read mock behaviour " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    if (j.is_object() && !j.contains("seed")) j["seed"] = default_seed;
    return mock_behavior_from_json(j);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidBehavior, path.string() + ": " + e.what());
  }
}

inline std::shared_ptr<Provider> make_mock_provider(const PipelineConfig& cfg, const std::vector<VideoSample>& manifest) {
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  MockBehavior b;
  b.seed = seed;
  if (!cfg.provider.mock_behavior_path.empty()) b = load_mock_behavior(cfg.provider.mock_behavior_path, seed);
  for (const auto& s : manifest) b.truths.try_emplace(s.id, s.label);
  return mock_configure(std::move(b));
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

struct PipelineOptions {
  std::filesystem::path out_dir = "out";
  std::filesystem::path transcript_path;
  bool resume = false;
};

/// The staged pipeline. Every stage reads and writes plain files under
/// out_dir and refuses to run when an upstream artifact is missing.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, PipelineOptions options, ProviderFactory factory)
      : cfg_(std::move(config)), opts_(std::move(options)), factory_(std::move(factory)) {
    std::filesystem::create_directories(opts_.out_dir);
  }

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path path(std::string_view name) const { return opts_.out_dir / std::string(name); }

  /// Extracts frames, writes the prepared manifest and the split.
  void prepare(const std::filesystem::path& manifest_path) {
    staged("prepare", [&] {
      auto samples = read_manifest(manifest_path);
      const auto frames_root = opts_.out_dir / "frames";
      parallel_for(samples.size(), static_cast<int>(cfg_.jobs), [&](std::size_t i) {
        auto& s = samples[i];
        if (!s.video_path.empty()) {
          const auto dir = std::filesystem::absolute(frames_root / s.id);
          s.frame_count = prepare_frames(s.video_path, dir, static_cast<std::size_t>(cfg_.max_frames), cfg_.extract_command);
          s.frames_dir = dir;
        } else {
          if (s.frames_dir.empty() || !std::filesystem::is_directory(s.frames_dir)) {
            throw Error(ErrorCode::ExtractionFailed, s.id + ": neither a video nor a frames directory");
          }
          s.frame_count = count_frames(s.frames_dir);
          if (s.frame_count == 0) throw Error(ErrorCode::NotAVideo, s.id + ": frames directory is empty");
        }
      });
      write_manifest(path(artifacts::kPreparedManifest), samples);
      const auto split = split_manifest(samples, cfg_.reference_fraction, static_cast<std::uint64_t>(cfg_.seed));
      write_json(path(artifacts::kSplit), to_json(split));
      log_info("prepared " + std::to_string(samples.size()) + " samples: " + std::to_string(split.reference.size()) +
               " reference, " + std::to_string(split.adaptation.size()) + " adaptation, " +
               std::to_string(split.inference.size()) + " inference");
    });
  }

  /// Proposes a toolkit and keeps the tools that reach the rgb baseline.
  void select() {
    staged("select", [&] {
      const auto split = load_split();
      Session s(*this);
      std::vector<Tool> candidates;
      if (cfg_.candidates.empty()) {
        candidates = propose_toolkit(*s.client, cfg_.provider.model_id);
        if (candidates.empty()) candidates = candidate_tools();
      } else {
        candidates = cfg_.candidate_list();
      }
      SelectionOptions so;
      so.alpha = cfg_.alpha;
      so.f1_mode = cfg_.f1_mode;
      so.jobs = static_cast<int>(cfg_.jobs);
      so.checkpoint_path = path(artifacts::kSelectionCheckpoint);
      if (!opts_.resume) std::filesystem::remove(so.checkpoint_path);
      const auto report = select_toolkit(s.ctx, candidates, split.reference, so);
      write_json(path(artifacts::kSelectionReport), to_json(report));
      std::filesystem::remove(so.checkpoint_path);
    });
  }

  /// Adapts one template per selected tool on the adaptation set.
  void adapt() {
    staged("adapt", [&] {
      const auto split = load_split();
      const auto toolkit = load_toolkit();
      Session s(*this);
      auto acfg = cfg_.adaptation_config();
      if (cfg_.provider.name != "mock") acfg.clock = utc_timestamp;
      nlohmann::json templates = nlohmann::json::object();
      for (auto tool : toolkit) {
        AdaptationPaths paths{path(artifacts::ledger(tool)), path(artifacts::checkpoint(tool)), opts_.resume};
        if (!opts_.resume) std::filesystem::remove(paths.checkpoint);
        if (cfg_.mode == DetectionMode::NonStructured) {
          templates[std::string(tool_name(tool))] = to_json(initial_template(tool));
          continue;
        }
        const auto result = run_adaptation(s.ctx, tool, split.adaptation, acfg, paths);
        templates[std::string(tool_name(tool))] = to_json(result.best_template);
        log_info(std::string(tool_name(tool)) + ": " + std::to_string(result.state.total_rewrites) +
                 " rewrites, F1 " + std::to_string(result.state.current_f1));
      }
      write_json(path(artifacts::kTemplates), templates);
    });
  }

  /// Final detection on the inference set, `repeats` times.
  void detect() {
    staged("detect", [&] {
      const auto split = load_split();
      const auto toolkit = load_toolkit();
      std::map<Tool, PromptTemplate> templates;
      if (cfg_.mode == DetectionMode::Structured) {
        const auto j = read_json(path(artifacts::kTemplates));
        for (const auto& [name, t] : j.items()) templates.emplace(parse_tool(name), template_from_json(t));
      }
      Session s(*this);
      std::ofstream out(path(artifacts::kVerdicts), std::ios::trunc);
      if (!out) throw Error(ErrorCode::Io, "cannot write " + path(artifacts::kVerdicts).string());
      const auto& samples = split.inference;
      for (int run = 0; run < cfg_.repeats; ++run) {
        std::vector<EnsembleVerdict> verdicts(samples.size());
        parallel_for(samples.size(), static_cast<int>(cfg_.jobs), [&](std::size_t i) {
          verdicts[i] = lavid::detect(s.ctx, samples[i], toolkit, templates, cfg_.mode, cfg_.video_specific);
          verdicts[i].run = run;
        });
        for (const auto& v : verdicts) out << to_json(v).dump() << '\n';
      }
    });
  }

  void evaluate() {
    staged("evaluate", [&] {
      const auto verdicts_path = require(artifacts::kVerdicts);
      const auto manifest = read_manifest(require(artifacts::kPreparedManifest));
      std::vector<EnsembleVerdict> verdicts;
      std::ifstream in(verdicts_path);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) verdicts.push_back(verdict_from_json(nlohmann::json::parse(line)));
      }
      const auto reports = lavid::evaluate(verdicts, truths_from_manifest(manifest));
      render_report(reports, opts_.out_dir, std::string(artifacts::kEvalStem));
      log_info("\n" + render_text(reports));
    });
  }

  void run_all(const std::filesystem::path& manifest_path) {
    prepare(manifest_path);
    select();
    adapt();
    detect();
    evaluate();
  }

 private:
  /// Client, evidence cache and detection context for one stage.
  struct Session {
    explicit Session(Pipeline& p)
        : adapters(p.cfg_.adapters),
          client(std::make_shared<Client>(p.factory_(p.cfg_, p.load_manifest()), p.client_options())),
          evidence(static_cast<std::size_t>(p.cfg_.window), &adapters),
          ctx{*client, evidence, p.cfg_.provider.model_id, p.cfg_.baseline_prompt} {}

    AdapterSet adapters;
    std::shared_ptr<Client> client;
    EvidenceCache evidence;
    DetectionContext ctx;
  };

  ClientOptions client_options() const {
    ClientOptions o;
    o.max_images = static_cast<std::size_t>(cfg_.provider.max_images);
    o.max_retries = static_cast<int>(cfg_.provider.max_retries);
    o.backoff = std::chrono::milliseconds(cfg_.provider.backoff_ms);
    o.requests_per_minute = cfg_.provider.requests_per_minute;
    o.transcript_path = opts_.transcript_path;
    if (!cfg_.provider.api_key.empty()) o.redact.push_back(cfg_.provider.api_key);
    if (!cfg_.refusal_patterns_path.empty()) o.refusal = RefusalClassifier::from_file(cfg_.refusal_patterns_path);
    return o;
  }

  template <typename Fn>
  void staged(std::string_view stage, Fn&& fn) {
    log_info(std::string(stage) + " ...");
    try {
      fn();
    } catch (const Error& e) {
      if (e.message().starts_with(std::string(stage) + ": ")) throw;
      throw Error(e.code(), std::string(stage) + ": " + e.message());
    }
  }

  std::filesystem::path require(std::string_view name) const {
    const auto p = path(name);
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCode::MissingArtifact, std::string(name) + " not found in " + opts_.out_dir.string());
    }
    return p;
  }

  static nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(ErrorCode::MissingArtifact, p.filename().string() + " not found");
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::Io, p.string() + ": " + e.what());
    }
  }

  static void write_json(const std::filesystem::path& p, const nlohmann::json& j) { detail::write_json_atomically(p, j); }

  DatasetSplit load_split() const { return split_from_json(read_json(require(artifacts::kSplit))); }
  std::vector<VideoSample> load_manifest() const { return read_manifest(require(artifacts::kPreparedManifest)); }

  std::vector<Tool> load_toolkit() const {
    const auto report = selection_report_from_json(read_json(require(artifacts::kSelectionReport)));
    if (report.selected.empty()) {
      log_warn("no tool reached the baseline; detecting with rgb alone");
      return {Tool::Rgb};
    }
    return report.selected;
  }

  PipelineConfig cfg_;
  PipelineOptions opts_;
  ProviderFactory factory_;
};

}  // namespace lavid
