#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lavid/error.hpp"

namespace lavid {

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }

  std::uint8_t* at(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool operator==(const Image&) const = default;
};

/// Ordered frames of one video; all frames share dimensions.
class FrameSequence {
 public:
  FrameSequence() = default;
  explicit FrameSequence(std::vector<Image> frames) : frames_(std::move(frames)) {
    for (const auto& f : frames_) {
      if (f.width != frames_.front().width || f.height != frames_.front().height) {
        throw Error(ErrorCode::InvalidRequest, "frame sequence has mixed dimensions");
      }
    }
  }

  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  const Image& operator[](std::size_t i) const { return frames_[i]; }
  const Image& front() const { return frames_.front(); }
  auto begin() const { return frames_.begin(); }
  auto end() const { return frames_.end(); }
  const std::vector<Image>& frames() const noexcept { return frames_; }

  int width() const { return frames_.empty() ? 0 : frames_.front().width; }
  int height() const { return frames_.empty() ? 0 : frames_.front().height; }

  bool operator==(const FrameSequence&) const = default;

 private:
  std::vector<Image> frames_;
};

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// Rec.601 luma in [0, 255].
inline double luma(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

struct Hsv {
  double h = 0;  // degrees [0, 360)
  double s = 0;  // [0, 1]
  double v = 0;  // [0, 1]
};

inline Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? d / mx : 0.0;
  if (d > 0) {
    if (mx == r) {
      out.h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
      out.h = 60.0 * ((b - r) / d + 2.0);
    } else {
      out.h = 60.0 * ((r - g) / d + 4.0);
    }
    if (out.h < 0) out.h += 360.0;
  }
  return out;
}

inline std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {clamp_u8((r + m) * 255.0), clamp_u8((g + m) * 255.0), clamp_u8((b + m) * 255.0)};
}

// ---------------------------------------------------------------------------
// PNG codec (libpng simplified API).

inline Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorCode::Io, "cannot read png " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::Io, "cannot decode png " + path.string() + ": " + img.message);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, "cannot write png " + path.string() + ": " + img.message);
  }
}

inline std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("png size query failed: ") + img.message);
  }
  std::vector<std::uint8_t> buf(size);
  if (!png_image_write_to_memory(&img, buf.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("png encode failed: ") + img.message);
  }
  buf.resize(size);
  return buf;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::Io, std::string("cannot parse png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::Io, std::string("cannot decode png: ") + img.message);
  }
  return out;
}

/// Canonical on-disk frame name: frame_00000.png, 0-based.
inline std::string frame_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.png", index);
  return buf;
}

/// Sorted list of frame_*.png files in a directory.
inline std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("frame_") && name.ends_with(".png")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline void write_frames(const std::filesystem::path& dir, const FrameSequence& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) write_png(dir / frame_filename(i), frames[i]);
}

}  // namespace lavid
