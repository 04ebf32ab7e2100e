#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include "lavid/error.hpp"
#include "lavid/image.hpp"
#include "lavid/process.hpp"

namespace lavid {

enum class Tool { Rgb, Saturation, Denoise, Sharpen, Enhance, Segmentation, OpticalFlow, Landmark, Depth, Edge };
enum class ToolCategory { Appearance, Motion, Geometry, Raw };
enum class ToolKind { BuiltinFilter, BuiltinFlow, ExternalAdapter };

struct ToolInfo {
  Tool id;
  std::string_view name;     // canonical identifier used in configs, prompts and field names
  std::string_view display;  // human-readable label
  ToolCategory category;
  ToolKind kind;
  std::string_view description;  // one-line explanation shown to the model
};

// clang-format off
inline constexpr std::array<ToolInfo, 10> kToolRegistry{{
  {Tool::Rgb, "rgb", "RGB", ToolCategory::Raw, ToolKind::BuiltinFilter,
   "Raw RGB frames without any additional processing."},
  {Tool::Saturation, "saturation", "Saturation", ToolCategory::Appearance, ToolKind::BuiltinFilter,
   "AI-generated videos may exhibit anomalies in color rendering. Saturation estimation detects color "
   "unevenness, oversaturation, or undersaturation to identify artificial elements."},
  {Tool::Denoise, "denoise", "Denoised", ToolCategory::Appearance, ToolKind::BuiltinFilter,
   "Denoising isolates unnatural noise patterns present in AI-generated videos. Residual artifacts after "
   "denoising can signal synthesized or forged content."},
  {Tool::Sharpen, "sharpen", "Sharpen", ToolCategory::Appearance, ToolKind::BuiltinFilter,
   "Sharpening frames emphasizes edges, making it easier to spot unnatural boundaries or blending "
   "artifacts, which may indicate forgery."},
  {Tool::Enhance, "enhance", "Enhance", ToolCategory::Appearance, ToolKind::BuiltinFilter,
   "Image enhancement boosts details and contrast, revealing synthetic artifacts like unnatural textures "
   "or color inconsistencies."},
  {Tool::Segmentation, "segmentation", "Segmentation Map", ToolCategory::Appearance, ToolKind::ExternalAdapter,
   "Segmentation maps identify mismatched regions in synthesized content, such as areas where the object "
   "segmentation boundaries do not align with real-world logic."},
  {Tool::OpticalFlow, "optical_flow", "Optical Flow", ToolCategory::Motion, ToolKind::BuiltinFlow,
   "AI-generated videos may have abnormal motion patterns, such as discontinuous movements or unnatural "
   "trajectories. Optical flow estimation detects whether object motion in the video is smooth and "
   "adheres to physical laws."},
  {Tool::Landmark, "landmark", "Landmark", ToolCategory::Motion, ToolKind::ExternalAdapter,
   "In AI-generated videos, facial or body key point localization may show anomalies, such as "
   "misalignment or unnatural movement. Landmark estimation detects these anomalies to identify potential "
   "forgery."},
  {Tool::Depth, "depth", "Depth Map", ToolCategory::Geometry, ToolKind::ExternalAdapter,
   "Depth information is consistent in real scenes but may exhibit anomalies in AI-generated videos. Depth "
   "estimation detects issues like depth dislocation and discontinuity, helping identify forged content."},
  {Tool::Edge, "edge", "Edge", ToolCategory::Geometry, ToolKind::BuiltinFilter,
   "Synthetic videos often feature unnatural edge details, such as blurred, jagged, or discontinuous "
   "object boundaries. Edge detection identifies such abnormalities to pinpoint fake or synthetic "
   "elements."},
}};
// clang-format on

constexpr const ToolInfo& tool_info(Tool t) { return kToolRegistry[static_cast<std::size_t>(t)]; }
constexpr std::string_view tool_name(Tool t) { return tool_info(t).name; }

inline std::optional<Tool> find_tool(std::string_view name) {
  for (const auto& info : kToolRegistry) {
    if (info.name == name) return info.id;
  }
  return std::nullopt;
}

inline Tool parse_tool(std::string_view name) {
  if (auto t = find_tool(name)) return *t;
  throw Error(ErrorCode::ConfigError, "unknown tool \"" + std::string(name) + "\"");
}

/// The nine candidate tools (everything except the rgb baseline).
inline std::vector<Tool> candidate_tools() {
  std::vector<Tool> out;
  for (const auto& info : kToolRegistry) {
    if (info.id != Tool::Rgb) out.push_back(info.id);
  }
  return out;
}

struct EKArtifact {
  Tool tool = Tool::Rgb;
  FrameSequence frames;
  std::map<std::string, std::string> meta;
};

// ---------------------------------------------------------------------------
// Filter kernels

namespace filters {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    const double x = i - r;
    k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& w : k) w /= sum;
  return k;
}

/// Kernel size covering +/-3 sigma.
inline int kernel_size_for(double sigma) { return 2 * static_cast<int>(std::ceil(3 * sigma)) + 1; }

/// Separable Gaussian blur with replicated borders; interleaved RGB doubles.
inline std::vector<double> gaussian_blur(const Image& img, int size, double sigma) {
  const auto k = gaussian_kernel(size, sigma);
  const int r = size / 2;
  const int w = img.width, h = img.height;
  std::vector<double> tmp(img.rgb.size()), out(img.rgb.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += k[static_cast<std::size_t>(i + r)] * img.at(xx, y)[c];
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += k[static_cast<std::size_t>(i + r)] * tmp[(static_cast<std::size_t>(yy) * w + x) * 3 + c];
        }
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  return out;
}

inline Image saturation(const Image& img) {
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const auto* p = &img.rgb[i * 3];
    const auto s = clamp_u8(rgb_to_hsv(p[0], p[1], p[2]).s * 255.0);
    out.rgb[i * 3] = out.rgb[i * 3 + 1] = out.rgb[i * 3 + 2] = s;
  }
  return out;
}

inline constexpr int kDenoiseKernel = 5;
inline constexpr double kDenoiseSigma = 1.5;

inline Image denoise(const Image& img) {
  const auto blurred = gaussian_blur(img, kDenoiseKernel, kDenoiseSigma);
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < blurred.size(); ++i) out.rgb[i] = clamp_u8(blurred[i]);
  return out;
}

inline constexpr double kSharpenSigma = 1.0;
inline constexpr double kSharpenAmount = 1.0;

/// Unsharp mask: in + amount * (in - gaussian(in)).
inline Image sharpen(const Image& img) {
  const auto blurred = gaussian_blur(img, kernel_size_for(kSharpenSigma), kSharpenSigma);
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < blurred.size(); ++i) {
    const double v = img.rgb[i];
    out.rgb[i] = clamp_u8(v + kSharpenAmount * (v - blurred[i]));
  }
  return out;
}

/// Per-channel min-max stretch; a constant channel maps to 0.
inline Image enhance(const Image& img) {
  std::array<int, 3> lo{255, 255, 255}, hi{0, 0, 0};
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min<int>(lo[c], img.rgb[i * 3 + c]);
      hi[c] = std::max<int>(hi[c], img.rgb[i * 3 + c]);
    }
  }
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const int range = hi[c] - lo[c];
      out.rgb[i * 3 + c] = range == 0 ? 0 : clamp_u8((img.rgb[i * 3 + c] - lo[c]) * 255.0 / range);
    }
  }
  return out;
}

/// Sobel gradient magnitude on luma, scaled so the frame maximum maps to 255.
inline Image edge(const Image& img) {
  const int w = img.width, h = img.height;
  std::vector<double> gray(img.pixel_count());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = luma(&img.rgb[i * 3]);
  auto g = [&](int x, int y) {
    return gray[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  std::vector<double> mag(gray.size());
  double peak = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (g(x + 1, y - 1) + 2 * g(x + 1, y) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x - 1, y) + g(x - 1, y + 1));
      const double gy = (g(x - 1, y + 1) + 2 * g(x, y + 1) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x, y - 1) + g(x + 1, y - 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * w + x] = m;
      peak = std::max(peak, m);
    }
  }
  Image out(w, h);
  if (peak <= 0) return out;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    out.rgb[i * 3] = out.rgb[i * 3 + 1] = out.rgb[i * 3 + 2] = clamp_u8(mag[i] * 255.0 / peak);
  }
  return out;
}

}  // namespace filters

// ---------------------------------------------------------------------------
// Dense optical flow

struct HornSchunckParams {
  double lambda = 0.1;  // smoothness weight (alpha^2) against 0-255 luma
  int iterations = 100;
  double tolerance = 1e-4;  // stop when the mean |du| + |dv| drops below this
};

struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;  // +x is rightwards
  std::vector<double> v;  // +y is downwards
  int iterations_run = 0;

  double mean_u() const;
  double mean_v() const;
};

inline double FlowField::mean_u() const {
  double s = 0;
  for (double x : u) s += x;
  return u.empty() ? 0.0 : s / static_cast<double>(u.size());
}

inline double FlowField::mean_v() const {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Horn-Schunck flow from `first` to `second` using the original 2x2x2
/// derivative cube and the 1/6, 1/12 neighbourhood average.
inline FlowField horn_schunck(const Image& first, const Image& second, const HornSchunckParams& params = {}) {
  const int w = first.width, h = first.height;
  const std::size_t n = first.pixel_count();
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = luma(&first.rgb[i * 3]);
    b[i] = luma(&second.rgb[i * 3]);
  }
  auto at = [w, h](const std::vector<double>& m, int x, int y) {
    return m[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  std::vector<double> ex(n), ey(n), et(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      ex[i] = 0.25 * (at(a, x + 1, y) - at(a, x, y) + at(a, x + 1, y + 1) - at(a, x, y + 1) +
                      at(b, x + 1, y) - at(b, x, y) + at(b, x + 1, y + 1) - at(b, x, y + 1));
      ey[i] = 0.25 * (at(a, x, y + 1) - at(a, x, y) + at(a, x + 1, y + 1) - at(a, x + 1, y) +
                      at(b, x, y + 1) - at(b, x, y) + at(b, x + 1, y + 1) - at(b, x + 1, y));
      et[i] = 0.25 * (at(b, x, y) - at(a, x, y) + at(b, x, y + 1) - at(a, x, y + 1) +
                      at(b, x + 1, y) - at(a, x + 1, y) + at(b, x + 1, y + 1) - at(a, x + 1, y + 1));
    }
  }

  FlowField flow{w, h, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
  std::vector<double> nu(n), nv(n);
  auto average = [&](const std::vector<double>& m, int x, int y) {
    return (at(m, x - 1, y) + at(m, x + 1, y) + at(m, x, y - 1) + at(m, x, y + 1)) / 6.0 +
           (at(m, x - 1, y - 1) + at(m, x + 1, y - 1) + at(m, x - 1, y + 1) + at(m, x + 1, y + 1)) / 12.0;
  };
  for (int it = 0; it < params.iterations; ++it) {
    double update = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<std::size_t>(y) * w + x;
        const double ub = average(flow.u, x, y);
        const double vb = average(flow.v, x, y);
        const double d = (ex[i] * ub + ey[i] * vb + et[i]) / (params.lambda + ex[i] * ex[i] + ey[i] * ey[i]);
        nu[i] = ub - ex[i] * d;
        nv[i] = vb - ey[i] * d;
        update += std::fabs(nu[i] - flow.u[i]) + std::fabs(nv[i] - flow.v[i]);
      }
    }
    flow.u.swap(nu);
    flow.v.swap(nv);
    flow.iterations_run = it + 1;
    if (update / static_cast<double>(n) < params.tolerance) break;
  }
  return flow;
}

/// Colour-wheel rendering: hue = direction (atan2(v, u) in degrees, image
/// coordinates), value = magnitude / frame max, saturation = full. Zero
/// motion renders black.
inline Image render_flow(const FlowField& flow) {
  Image out(flow.width, flow.height);
  double peak = 0;
  for (std::size_t i = 0; i < flow.u.size(); ++i) peak = std::max(peak, std::hypot(flow.u[i], flow.v[i]));
  if (peak <= 1e-12) return out;
  constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    double angle = std::atan2(flow.v[i], flow.u[i]) * kRadToDeg;
    if (angle < 0) angle += 360.0;
    const auto rgb = hsv_to_rgb(angle, 1.0, std::hypot(flow.u[i], flow.v[i]) / peak);
    out.rgb[i * 3] = rgb[0];
    out.rgb[i * 3 + 1] = rgb[1];
    out.rgb[i * 3 + 2] = rgb[2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// External adapters (segmentation, depth, landmark)

struct AdapterConfig {
  std::string command;
  bool concurrency_safe = false;
};

/// Runs configured external commands as
///   <command> --tool <name> --in <frames_dir> --out <out_dir>
/// Each command must write one image per input frame with identical names.
class AdapterSet {
 public:
  AdapterSet() = default;
  explicit AdapterSet(std::map<std::string, AdapterConfig> adapters) {
    for (auto& [name, cfg] : adapters) add(parse_tool(name), std::move(cfg));
  }

  void add(Tool tool, AdapterConfig cfg) {
    locks_.try_emplace(cfg.command, std::make_shared<std::mutex>());
    adapters_[tool] = std::move(cfg);
  }

  bool configured(Tool tool) const { return adapters_.contains(tool); }
  const std::map<Tool, AdapterConfig>& entries() const { return adapters_; }

  FrameSequence run(Tool tool, const FrameSequence& input) const {
    namespace fs = std::filesystem;
    const auto it = adapters_.find(tool);
    if (it == adapters_.end()) {
      throw Error(ErrorCode::AdapterUnavailable, "no adapter configured for " + std::string(tool_name(tool)));
    }
    const auto& cfg = it->second;

    static std::atomic<unsigned> counter{0};
    const auto work = fs::temp_directory_path() /
                      ("lavid-adapter-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    struct Cleanup {
      fs::path p;
      ~Cleanup() {
        std::error_code ec;
        fs::remove_all(p, ec);
      }
    } cleanup{work};
    const auto in_dir = work / "in", out_dir = work / "out";
    write_frames(in_dir, input);
    fs::create_directories(out_dir);

    auto argv = split_command(cfg.command);
    argv.insert(argv.end(), {"--tool", std::string(tool_name(tool)), "--in", in_dir.string(), "--out", out_dir.string()});
    ProcessResult result;
    if (cfg.concurrency_safe) {
      result = run_process(argv);
    } else {
      std::lock_guard lock(*locks_.at(cfg.command));
      result = run_process(argv);
    }
    if (result.exit_code != 0) {
      throw Error(ErrorCode::AdapterUnavailable, std::string(tool_name(tool)) + " adapter exited " +
                                                     std::to_string(result.exit_code) + ": " + result.output);
    }
    std::vector<Image> frames;
    for (std::size_t i = 0; i < input.size(); ++i) {
      const auto path = out_dir / frame_filename(i);
      if (!fs::exists(path)) {
        throw Error(ErrorCode::AdapterUnavailable,
                    std::string(tool_name(tool)) + " adapter did not write " + path.filename().string());
      }
      auto img = read_png(path);
      if (img.width != input.width() || img.height != input.height()) {
        throw Error(ErrorCode::AdapterUnavailable,
                    std::string(tool_name(tool)) + " adapter changed frame dimensions");
      }
      frames.push_back(std::move(img));
    }
    return FrameSequence(std::move(frames));
  }

 private:
  std::map<Tool, AdapterConfig> adapters_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

template <typename Fn>
FrameSequence map_frames(const FrameSequence& input, Fn&& fn) {
  std::vector<Image> out;
  out.reserve(input.size());
  for (const auto& f : input) out.push_back(fn(f));
  return FrameSequence(std::move(out));
}
}  // namespace detail

inline EKArtifact apply_tool(Tool tool, const FrameSequence& input, const AdapterSet* adapters = nullptr) {
  if (input.empty()) throw Error(ErrorCode::InvalidRequest, "empty frame sequence");
  EKArtifact art;
  art.tool = tool;
  switch (tool) {
    case Tool::Rgb:
      art.frames = input;
      break;
    case Tool::Saturation:
      art.frames = detail::map_frames(input, filters::saturation);
      art.meta["channel"] = "hsv_s";
      break;
    case Tool::Denoise:
      art.frames = detail::map_frames(input, filters::denoise);
      art.meta["kernel"] = std::to_string(filters::kDenoiseKernel);
      art.meta["sigma"] = detail::fmt_double(filters::kDenoiseSigma);
      break;
    case Tool::Sharpen:
      art.frames = detail::map_frames(input, filters::sharpen);
      art.meta["kernel"] = std::to_string(filters::kernel_size_for(filters::kSharpenSigma));
      art.meta["sigma"] = detail::fmt_double(filters::kSharpenSigma);
      art.meta["amount"] = detail::fmt_double(filters::kSharpenAmount);
      break;
    case Tool::Enhance:
      art.frames = detail::map_frames(input, filters::enhance);
      art.meta["stretch"] = "per_channel_min_max";
      break;
    case Tool::Edge:
      art.frames = detail::map_frames(input, filters::edge);
      art.meta["operator"] = "sobel3x3";
      break;
    case Tool::OpticalFlow: {
      if (input.size() < 2) throw Error(ErrorCode::TooFewFrames, "optical_flow needs at least 2 frames");
      const HornSchunckParams params;
      std::vector<Image> out;
      for (std::size_t i = 0; i + 1 < input.size(); ++i) {
        out.push_back(render_flow(horn_schunck(input[i], input[i + 1], params)));
      }
      art.frames = FrameSequence(std::move(out));
      art.meta["method"] = "horn_schunck";
      art.meta["lambda"] = detail::fmt_double(params.lambda);
      art.meta["iterations"] = std::to_string(params.iterations);
      art.meta["tolerance"] = detail::fmt_double(params.tolerance);
      break;
    }
    case Tool::Segmentation:
    case Tool::Landmark:
    case Tool::Depth:
      if (adapters == nullptr) {
        throw Error(ErrorCode::AdapterUnavailable, "no adapter configured for " + std::string(tool_name(tool)));
      }
      art.frames = adapters->run(tool, input);
      art.meta["adapter"] = adapters->entries().at(tool).command;
      break;
  }
  return art;
}

/// Applies each tool in order; errors carry the failing tool's name.
inline std::vector<EKArtifact> apply_toolkit(const std::vector<Tool>& tools, const FrameSequence& input,
                                             const AdapterSet* adapters = nullptr) {
  if (tools.empty()) throw Error(ErrorCode::InvalidRequest, "empty toolkit");
  std::vector<EKArtifact> out;
  out.reserve(tools.size());
  for (auto t : tools) {
    try {
      out.push_back(apply_tool(t, input, adapters));
    } catch (const Error& e) {
      throw Error(e.code(), "[" + std::string(tool_name(t)) + "] " + e.message());
    }
  }
  return out;
}

}  // namespace lavid
