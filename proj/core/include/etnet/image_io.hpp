#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace etnet::data {

struct PngImage {
  int h = 0, w = 0, channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

PngImage read_png(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& rgb);
void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& gray);

}  // namespace etnet::data
