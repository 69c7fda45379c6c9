#include "handfold/depth_image.hpp"

#include <cstring>
#include <fstream>

#include "handfold/common.hpp"

namespace handfold {

namespace {

// The format is little-endian by definition; this code assumes a
// little-endian host, which covers every supported target.
template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

DepthImage read_depth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open depth file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DPTH", 4) != 0) {
    throw FormatError("bad depth magic in " + path + " (expected DPTH)");
  }
  DepthImage img;
  img.height = read_pod<std::uint32_t>(in);
  img.width = read_pod<std::uint32_t>(in);
  if (!in || img.height == 0 || img.width == 0 || img.height > 1 << 16 || img.width > 1 << 16) {
    throw FormatError("bad depth dimensions in " + path);
  }
  img.mm.resize(static_cast<std::size_t>(img.height) * img.width);
  in.read(reinterpret_cast<char*>(img.mm.data()),
          static_cast<std::streamsize>(img.mm.size() * sizeof(std::uint16_t)));
  if (!in) throw FormatError("truncated depth payload in " + path);
  return img;
}

void write_depth(const std::string& path, const DepthImage& img) {
  if (img.mm.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw FormatError("depth payload size does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write depth file: " + path);
  out.write("DPTH", 4);
  out.write(reinterpret_cast<const char*>(&img.height), 4);
  out.write(reinterpret_cast<const char*>(&img.width), 4);
  out.write(reinterpret_cast<const char*>(img.mm.data()),
            static_cast<std::streamsize>(img.mm.size() * sizeof(std::uint16_t)));
  if (!out) throw FormatError("failed writing depth file: " + path);
}

}  // namespace handfold
