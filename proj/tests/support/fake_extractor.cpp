// Stand-in for a video decoder. The "video" is a text file holding
// "<seed> <width> <height> <frames>"; every frame is written, regardless of
// the requested cap, numbered from 1.
//   fake_extractor <video> <out_dir> <max_frames>

#include <cstdint>
#include <fstream>
#include <iostream>

#include "fixtures.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: fake_extractor <video> <out_dir> <max_frames>\n";
    return 2;
  }
  std::ifstream in(argv[1]);
  std::uint64_t seed = 0;
  int w = 0, h = 0, n = 0;
  if (!(in >> seed >> w >> h >> n) || w <= 0 || h <= 0) {
    std::cerr << argv[1] << ": not a video\n";
    return 1;
  }
  const std::filesystem::path out = argv[2];
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05d.png", i + 1);
    lavid::write_png(out / name, lavid::testing::procedural_frame(w, h, seed, i));
  }
  return 0;
}
