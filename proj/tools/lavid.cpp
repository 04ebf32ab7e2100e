// Command-line front end for the staged detection pipeline.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "lavid/config.hpp"
#include "lavid/log.hpp"
#include "lavid/openai_provider.hpp"
#include "lavid/pipeline.hpp"

namespace {

struct Options {
  std::string config_path;
  std::string manifest;
  std::string out = "out";
  std::optional<std::string> provider;
  std::optional<std::int64_t> max_frames;
  std::optional<std::int64_t> window;
  std::optional<std::int64_t> seed;
  std::optional<std::int64_t> repeats;
  std::optional<std::int64_t> jobs;
  std::optional<std::string> mock_behavior;
  std::string transcript;
  bool resume = false;
  int verbose = 0;
};

int exit_code(lavid::ErrorCode code) {
  using lavid::ErrorCode;
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidBehavior: return 2;
    case ErrorCode::MissingArtifact: return 3;
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::Timeout:
    case ErrorCode::ProviderError:
    case ErrorCode::InvalidRequest:
    case ErrorCode::SchemaViolation: return 4;
    default: return 1;
  }
}

lavid::PipelineConfig build_config(const Options& o) {
  auto cfg = o.config_path.empty() ? lavid::PipelineConfig{} : lavid::load_config(o.config_path);
  if (o.provider) cfg.provider.name = *o.provider;
  if (o.max_frames) cfg.max_frames = *o.max_frames;
  if (o.window) cfg.window = *o.window;
  if (o.seed) cfg.seed = *o.seed;
  if (o.repeats) cfg.repeats = *o.repeats;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.mock_behavior) cfg.provider.mock_behavior_path = *o.mock_behavior;
  lavid::apply_env(cfg);
  lavid::validate_config(cfg);
  return cfg;
}

std::shared_ptr<lavid::Provider> make_provider(const lavid::PipelineConfig& cfg,
                                               const std::vector<lavid::VideoSample>& manifest) {
  if (cfg.provider.name == "mock") return lavid::make_mock_provider(cfg, manifest);
  if (cfg.provider.api_key.empty()) {
    throw lavid::Error(lavid::ErrorCode::ConfigError, "LAVID_API_KEY is not set");
  }
  lavid::OpenAiOptions o;
  o.endpoint = cfg.provider.endpoint;
  o.api_key = cfg.provider.api_key;
  o.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(cfg.provider.timeout_s * 1000));
  o.native_schema = cfg.provider.native_schema;
  return std::make_shared<lavid::OpenAiProvider>(o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free AI-generated video detection with vision-language models"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd, bool needs_manifest) {
    cmd->add_option("-c,--config", o.config_path, "Pipeline configuration (TOML)")->check(CLI::ExistingFile);
    if (needs_manifest) {
      cmd->add_option("-m,--manifest", o.manifest, "Video manifest (JSONL)")->required()->check(CLI::ExistingFile);
    }
    cmd->add_option("-o,--out", o.out, "Output directory")->capture_default_str();
    cmd->add_option("--provider", o.provider, "Provider override: openai or mock");
    cmd->add_option("--max-frames", o.max_frames, "Frames decoded per video");
    cmd->add_option("--window", o.window, "Frames shown to the model per video");
    cmd->add_option("--seed", o.seed, "Split and mock seed");
    cmd->add_option("--repeats", o.repeats, "Detection runs to average");
    cmd->add_option("-j,--jobs", o.jobs, "Concurrent model calls");
    cmd->add_option("--mock-behavior", o.mock_behavior, "Mock behaviour file (JSON)");
    cmd->add_option("--transcript", o.transcript, "Append every model exchange to this JSONL file");
    cmd->add_flag("--resume", o.resume, "Continue select/adapt from their checkpoints");
    cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");
  };

  auto* prepare = app.add_subcommand("prepare", "Extract frames and split the manifest");
  auto* select = app.add_subcommand("select", "Score tools on the reference set and pick the toolkit");
  auto* adapt = app.add_subcommand("adapt", "Adapt structured templates on the adaptation set");
  auto* detect = app.add_subcommand("detect", "Detect on the inference set");
  auto* evaluate = app.add_subcommand("evaluate", "Write accuracy/F1 reports");
  auto* run_all = app.add_subcommand("run-all", "Run every stage in order");
  common(prepare, true);
  common(select, false);
  common(adapt, false);
  common(detect, false);
  common(evaluate, false);
  common(run_all, true);

  CLI11_PARSE(app, argc, argv);

  if (o.verbose > 0) lavid::set_log_level(lavid::LogLevel::Debug);

  try {
    const auto cfg = build_config(o);
    lavid::PipelineOptions po;
    po.out_dir = o.out;
    po.transcript_path = o.transcript;
    po.resume = o.resume;
    lavid::Pipeline pipeline(cfg, po, make_provider);
    if (*prepare) pipeline.prepare(o.manifest);
    if (*select) pipeline.select();
    if (*adapt) pipeline.adapt();
    if (*detect) pipeline.detect();
    if (*evaluate) pipeline.evaluate();
    if (*run_all) pipeline.run_all(o.manifest);
  } catch (const lavid::Error& e) {
    std::cerr << "lavid: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "lavid: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
