#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/hash.hpp"
#include "lavid/image.hpp"
#include "lavid/inference.hpp"
#include "lavid/mock_lvlm.hpp"

namespace lavid::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "lavid-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Smooth moving texture with a little hashed noise; `seed` varies the
/// pattern, frame index moves it.
inline Image procedural_frame(int w, int h, std::uint64_t seed, int index) {
  Image img(w, h);
  const double phase = static_cast<double>(seed % 997) * 0.37;
  const double drift = index * (1.0 + static_cast<double>(seed % 3));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double xs = x + drift;
      const double r = 128 + 90 * std::sin(xs * 0.31 + phase) * std::cos(y * 0.23);
      const double g = 128 + 80 * std::cos(xs * 0.17 - y * 0.29 + phase);
      const double b = 128 + 70 * std::sin((xs + y) * 0.11 + 2 * phase);
      const double n = (unit_interval(splitmix64(seed ^ (static_cast<std::uint64_t>(index) << 32) ^
                                                 static_cast<std::uint64_t>(y * w + x))) - 0.5) * 10;
      img.set(x, y, clamp_u8(r + n), clamp_u8(g + n), clamp_u8(b + n));
    }
  }
  return img;
}

inline FrameSequence procedural_sequence(int w, int h, std::uint64_t seed, int count) {
  std::vector<Image> frames;
  for (int i = 0; i < count; ++i) frames.push_back(procedural_frame(w, h, seed, i));
  return FrameSequence(std::move(frames));
}

struct FixtureOptions {
  int n_real = 20;
  int n_ai = 20;
  int frames = 10;
  int width = 24;
  int height = 24;
  /// When true, samples point at "video" descriptor files for the fake
  /// extractor instead of frame directories.
  bool as_videos = false;
  std::vector<std::string> real_sources = {"camera", "archive"};
  std::vector<std::string> ai_sources = {"gen_a", "gen_b"};
};

/// Writes a labelled synthetic corpus and its manifest; returns the manifest path.
inline std::filesystem::path write_fixture(const std::filesystem::path& dir, const FixtureOptions& o = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<VideoSample> samples;
  auto add = [&](const std::string& prefix, GroundTruth label, int count, const std::vector<std::string>& sources) {
    for (int i = 0; i < count; ++i) {
      VideoSample s;
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03d", prefix.c_str(), i);
      s.id = id;
      s.source = sources[static_cast<std::size_t>(i) % sources.size()];
      s.label = label;
      const auto seed = fnv1a(s.id);
      if (o.as_videos) {
        s.video_path = dir / "videos" / (s.id + ".vid");
        fs::create_directories(s.video_path.parent_path());
        std::ofstream(s.video_path) << seed << ' ' << o.width << ' ' << o.height << ' ' << o.frames << '\n';
      } else {
        s.frames_dir = dir / "frames" / s.id;
        write_frames(s.frames_dir, procedural_sequence(o.width, o.height, seed, o.frames));
        s.frame_count = static_cast<std::size_t>(o.frames);
      }
      samples.push_back(s);
    }
  };
  add("real", GroundTruth::Real, o.n_real, o.real_sources);
  add("ai", GroundTruth::Ai, o.n_ai, o.ai_sources);
  const auto manifest = dir / "manifest.jsonl";
  write_manifest(manifest, samples);
  return manifest;
}

/// Forwards to another provider and keeps a copy of every request.
class RecordingProvider : public Provider {
 public:
  explicit RecordingProvider(std::shared_ptr<Provider> inner) : inner_(std::move(inner)) {}

  ProviderReply send(const LvlmRequest& request, bool native_schema) override {
    {
      std::lock_guard lock(mu_);
      sent_.push_back(request);
    }
    return inner_->send(request, native_schema);
  }
  bool supports_native_schema() const override { return inner_->supports_native_schema(); }
  std::string name() const override { return inner_->name(); }

  std::vector<LvlmRequest> sent() const {
    std::lock_guard lock(mu_);
    return sent_;
  }
  std::size_t count(const std::string& purpose) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(sent_.begin(), sent_.end(), [&](const LvlmRequest& r) {
      return r.annotation("purpose") == purpose;
    }));
  }
  void clear() {
    std::lock_guard lock(mu_);
    sent_.clear();
  }

 private:
  std::shared_ptr<Provider> inner_;
  mutable std::mutex mu_;
  std::vector<LvlmRequest> sent_;
};

inline std::map<std::string, GroundTruth> truths_of(const std::vector<VideoSample>& samples) {
  std::map<std::string, GroundTruth> out;
  for (const auto& s : samples) out[s.id] = s.label;
  return out;
}

/// Mock model, recording wrapper, client and evidence cache wired together.
struct MockHarness {
  MockHarness(MockBehavior behavior, const std::vector<VideoSample>& samples, std::size_t window = 4,
              const AdapterSet* adapters = nullptr)
      : mock(make_mock(std::move(behavior), samples)),
        recorder(std::make_shared<RecordingProvider>(mock)),
        client(recorder, fast_client_options()),
        evidence(window, adapters),
        ctx{client, evidence, "mock-model"} {}

  static std::shared_ptr<MockLvlm> make_mock(MockBehavior b, const std::vector<VideoSample>& samples) {
    for (const auto& [id, label] : truths_of(samples)) b.truths.emplace(id, label);
    return mock_configure(std::move(b));
  }
  static ClientOptions fast_client_options() {
    ClientOptions o;
    o.backoff = std::chrono::milliseconds(1);
    return o;
  }

  std::shared_ptr<MockLvlm> mock;
  std::shared_ptr<RecordingProvider> recorder;
  Client client;
  EvidenceCache evidence;
  DetectionContext ctx;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lavid::testing
