#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace alab {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

void write_png(const std::filesystem::path& path, const Image8& img);
Image8 read_png(const std::filesystem::path& path);

}  // namespace alab
