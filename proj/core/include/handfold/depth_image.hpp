#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace handfold {

// 16-bit single-channel depth map in millimetres.
// On-disk layout: magic "DPTH", u32 height, u32 width, row-major u16 values,
// all little-endian.
struct DepthImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint16_t> mm;  // height*width values

  std::uint16_t at(std::uint32_t v, std::uint32_t u) const { return mm[v * width + u]; }
};

DepthImage read_depth(const std::string& path);
void write_depth(const std::string& path, const DepthImage& img);

}  // namespace handfold
