#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/error.hpp"
#include "lavid/hash.hpp"
#include "lavid/image.hpp"
#include "lavid/process.hpp"

namespace lavid {

enum class GroundTruth { Real, Ai };

constexpr std::string_view to_string(GroundTruth g) { return g == GroundTruth::Real ? "real" : "ai"; }

inline GroundTruth parse_ground_truth(std::string_view s) {
  if (s == "real") return GroundTruth::Real;
  if (s == "ai") return GroundTruth::Ai;
  throw Error(ErrorCode::InvalidRequest, "label must be \"real\" or \"ai\", got \"" + std::string(s) + "\"");
}

constexpr GroundTruth opposite(GroundTruth g) {
  return g == GroundTruth::Real ? GroundTruth::Ai : GroundTruth::Real;
}

struct VideoSample {
  std::string id;
  std::string source;  // generator or corpus name, e.g. "kling", "panda70m"
  GroundTruth label = GroundTruth::Real;
  std::filesystem::path frames_dir;
  std::filesystem::path video_path;  // empty when the manifest points at frames directly
  std::size_t frame_count = 0;

  bool operator==(const VideoSample&) const = default;
};

inline nlohmann::json to_json(const VideoSample& s) {
  nlohmann::json j{{"id", s.id}, {"source", s.source}, {"label", to_string(s.label)}};
  if (!s.video_path.empty()) j["video_path"] = s.video_path.string();
  if (!s.frames_dir.empty()) j["frames_dir"] = s.frames_dir.string();
  if (s.frame_count > 0) j["frame_count"] = s.frame_count;
  return j;
}

inline VideoSample sample_from_json(const nlohmann::json& j) {
  VideoSample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.source = j.value("source", std::string("unknown"));
    s.label = parse_ground_truth(j.at("label").get<std::string>());
    s.video_path = j.value("video_path", std::string());
    s.frames_dir = j.value("frames_dir", std::string());
    s.frame_count = j.value("frame_count", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidRequest, std::string("bad manifest entry: ") + e.what());
  }
  if (s.id.empty()) throw Error(ErrorCode::InvalidRequest, "manifest entry with empty id");
  if (s.video_path.empty() && s.frames_dir.empty()) {
    throw Error(ErrorCode::InvalidRequest, "manifest entry " + s.id + " needs video_path or frames_dir");
  }
  return s;
}

/// Line-delimited JSON manifest. Relative paths resolve against the
/// manifest's directory. Blank lines are skipped.
inline std::vector<VideoSample> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<VideoSample> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::InvalidRequest,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto s = sample_from_json(j);
    if (!s.video_path.empty() && s.video_path.is_relative()) s.video_path = base / s.video_path;
    if (!s.frames_dir.empty() && s.frames_dir.is_relative()) s.frames_dir = base / s.frames_dir;
    if (!ids.insert(s.id).second) throw Error(ErrorCode::InvalidRequest, "duplicate sample id " + s.id);
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<VideoSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Frame extraction

inline constexpr std::string_view kDefaultExtractCommand =
    "ffmpeg -nostdin -loglevel error -i {video} -frames:v {max_frames} -start_number 0 "
    "{out_dir}/frame_%05d.png";

namespace detail {
inline std::string substitute(std::string word, std::string_view key, const std::string& value) {
  for (auto pos = word.find(key); pos != std::string::npos; pos = word.find(key, pos + value.size())) {
    word.replace(pos, key.size(), value);
  }
  return word;
}
}  // namespace detail

/// Decodes up to max_frames consecutive frames from the start of a video into
/// out_dir as frame_%05d.png (0-based) by running the extraction command.
/// The command template may use {video}, {out_dir} and {max_frames}.
inline std::size_t prepare_frames(const std::filesystem::path& video_path,
                                  const std::filesystem::path& out_dir, std::size_t max_frames,
                                  std::string_view extract_command = kDefaultExtractCommand) {
  namespace fs = std::filesystem;
  if (max_frames < 1) throw Error(ErrorCode::InvalidRequest, "max_frames must be >= 1");
  if (!fs::exists(video_path)) {
    throw Error(ErrorCode::ExtractionFailed, "video not found: " + video_path.string());
  }
  fs::create_directories(out_dir);
  for (const auto& stale : list_frame_files(out_dir)) fs::remove(stale);

  auto argv = split_command(extract_command);
  for (auto& w : argv) {
    w = detail::substitute(w, "{video}", video_path.string());
    w = detail::substitute(w, "{out_dir}", out_dir.string());
    w = detail::substitute(w, "{max_frames}", std::to_string(max_frames));
  }
  const auto result = run_process(argv);
  if (result.exit_code != 0) {
    throw Error(ErrorCode::ExtractionFailed, video_path.string() + ": exit " +
                                                 std::to_string(result.exit_code) + ": " + result.output);
  }

  auto files = list_frame_files(out_dir);
  if (files.empty()) throw Error(ErrorCode::NotAVideo, "no frames produced for " + video_path.string());
  for (std::size_t i = max_frames; i < files.size(); ++i) fs::remove(files[i]);
  files.resize(std::min(files.size(), max_frames));
  // Normalise numbering to 0-based consecutive names; ascending renames never collide.
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto target = out_dir / frame_filename(i);
    if (files[i] != target) fs::rename(files[i], target);
  }
  return files.size();
}

inline std::size_t count_frames(const std::filesystem::path& frames_dir) {
  return list_frame_files(frames_dir).size();
}

// ---------------------------------------------------------------------------
// Frame windowing

struct WindowRange {
  std::size_t start = 0;
  std::size_t length = 0;
  bool operator==(const WindowRange&) const = default;
};

/// Middle window: start = floor((n - w) / 2); shorter clips return every frame.
constexpr WindowRange window_range(std::size_t frame_count, std::size_t window) {
  if (frame_count <= window) return {0, frame_count};
  return {(frame_count - window) / 2, window};
}

inline FrameSequence select_window(const VideoSample& sample, std::size_t window) {
  if (window < 1) throw Error(ErrorCode::InvalidRequest, "window must be >= 1");
  const auto files = list_frame_files(sample.frames_dir);
  if (files.empty()) throw Error(ErrorCode::NotAVideo, "no frames in " + sample.frames_dir.string());
  const auto range = window_range(files.size(), window);
  std::vector<Image> frames;
  frames.reserve(range.length);
  for (std::size_t i = 0; i < range.length; ++i) frames.push_back(read_png(files[range.start + i]));
  return FrameSequence(std::move(frames));
}

// ---------------------------------------------------------------------------
// Stratified split

struct DatasetSplit {
  std::vector<VideoSample> reference;
  std::vector<VideoSample> adaptation;
  std::vector<VideoSample> inference;
  std::uint64_t seed = 0;
  double reference_fraction = 0.25;
};

inline nlohmann::json to_json(const DatasetSplit& split) {
  auto list = [](const std::vector<VideoSample>& v) {
    auto arr = nlohmann::json::array();
    for (const auto& s : v) arr.push_back(to_json(s));
    return arr;
  };
  return {{"seed", split.seed},
          {"reference_fraction", split.reference_fraction},
          {"reference", list(split.reference)},
          {"adaptation", list(split.adaptation)},
          {"inference", list(split.inference)}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  auto list = [](const nlohmann::json& arr) {
    std::vector<VideoSample> v;
    for (const auto& e : arr) v.push_back(sample_from_json(e));
    return v;
  };
  DatasetSplit split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.reference_fraction = j.at("reference_fraction").get<double>();
  split.reference = list(j.at("reference"));
  split.adaptation = list(j.at("adaptation"));
  split.inference = list(j.at("inference"));
  return split;
}

namespace detail {

using Stratum = std::vector<const VideoSample*>;

// Per-stratum floor(fraction * n), then top up to floor(fraction * n_label)
// giving the extra slots to strata with the largest remainders (ties: larger
// stratum first, then source name).
inline std::vector<std::size_t> allocate(const std::vector<Stratum>& strata, double fraction) {
  std::size_t total = 0;
  for (const auto& s : strata) total += s.size();
  const auto target = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
  std::vector<std::size_t> take(strata.size());
  std::vector<double> remainder(strata.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const double exact = fraction * static_cast<double>(strata[i].size());
    take[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(take[i]);
    assigned += take[i];
  }
  std::vector<std::size_t> order(strata.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return strata[a].size() > strata[b].size();
  });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
    if (take[order[k]] < strata[order[k]].size()) {
      ++take[order[k]];
      ++assigned;
    }
  }
  return take;
}

}  // namespace detail

/// Partitions a manifest into reference / adaptation / inference sets,
/// stratified by label and source. Within a stratum, samples are ordered by a
/// seeded hash of their id, so the result depends only on (ids, fraction, seed).
inline DatasetSplit split_manifest(const std::vector<VideoSample>& manifest, double reference_fraction,
                                   std::uint64_t seed, double adaptation_fraction = 0.5) {
  if (!(reference_fraction > 0.0 && reference_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidRequest, "reference_fraction must lie in (0, 1)");
  }
  if (!(adaptation_fraction >= 0.0 && adaptation_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidRequest, "adaptation_fraction must lie in [0, 1]");
  }
  if (manifest.empty()) throw Error(ErrorCode::InvalidRequest, "empty manifest");

  std::map<GroundTruth, std::map<std::string, detail::Stratum>> by_label;
  for (const auto& s : manifest) by_label[s.label][s.source].push_back(&s);
  for (auto label : {GroundTruth::Real, GroundTruth::Ai}) {
    if (!by_label.contains(label)) {
      throw Error(ErrorCode::EmptyClass, "no samples labelled " + std::string(to_string(label)));
    }
  }

  auto key = [seed](const VideoSample* s) { return splitmix64(fnv1a(s->id) ^ seed); };
  std::set<std::string> in_reference, in_adaptation;
  for (auto& [label, sources] : by_label) {
    std::vector<detail::Stratum> strata;
    for (auto& [source, members] : sources) {
      std::sort(members.begin(), members.end(), [&](const VideoSample* a, const VideoSample* b) {
        const auto ka = key(a), kb = key(b);
        return ka != kb ? ka < kb : a->id < b->id;
      });
      strata.push_back(members);
    }
    const auto ref_take = detail::allocate(strata, reference_fraction);
    std::vector<detail::Stratum> rest(strata.size());
    for (std::size_t i = 0; i < strata.size(); ++i) {
      for (std::size_t k = 0; k < strata[i].size(); ++k) {
        if (k < ref_take[i]) {
          in_reference.insert(strata[i][k]->id);
        } else {
          rest[i].push_back(strata[i][k]);
        }
      }
    }
    const auto adapt_take = detail::allocate(rest, adaptation_fraction);
    for (std::size_t i = 0; i < rest.size(); ++i) {
      for (std::size_t k = 0; k < adapt_take[i]; ++k) in_adaptation.insert(rest[i][k]->id);
    }
  }

  DatasetSplit split;
  split.seed = seed;
  split.reference_fraction = reference_fraction;
  for (const auto& s : manifest) {
    if (in_reference.contains(s.id)) {
      split.reference.push_back(s);
    } else if (in_adaptation.contains(s.id)) {
      split.adaptation.push_back(s);
    } else {
      split.inference.push_back(s);
    }
  }
  return split;
}

}  // namespace lavid
