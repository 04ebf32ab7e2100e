// Stand-in for an external model adapter.
//   fake_adapter [--fail|--shrink] --tool <name> --in <dir> --out <dir>
// Writes the colour-inverted input frames under the same names.

#include <cstring>
#include <filesystem>
#include <iostream>
#include <string>

#include "lavid/image.hpp"

int main(int argc, char** argv) {
  std::string in, out, tool;
  bool fail = false, shrink = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--fail") fail = true;
    else if (a == "--shrink") shrink = true;
    else if (a == "--tool" && i + 1 < argc) tool = argv[++i];
    else if (a == "--in" && i + 1 < argc) in = argv[++i];
    else if (a == "--out" && i + 1 < argc) out = argv[++i];
  }
  if (fail) {
    std::cerr << "model weights not found\n";
    return 3;
  }
  for (const auto& f : lavid::list_frame_files(in)) {
    auto img = lavid::read_png(f);
    if (shrink) img = lavid::Image(img.width / 2, img.height / 2);
    for (auto& c : img.rgb) c = static_cast<std::uint8_t>(255 - c);
    lavid::write_png(std::filesystem::path(out) / f.filename(), img);
  }
  return 0;
}
