#include "etnet/image_io.hpp"

#include <png.h>

#include <stdexcept>
#include <string>

namespace etnet::data {

namespace {
[[noreturn]] void fail(const std::filesystem::path& path, const char* what,
                       const png_image& img) {
  throw std::runtime_error(std::string(what) + " '" + path.string() + "': " + img.message);
}
}  // namespace

PngImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    fail(path, "cannot read png", img);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  PngImage out;
  out.h = static_cast<int>(img.height);
  out.w = static_cast<int>(img.width);
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    fail(path, "cannot decode png", img);
  }
  return out;
}

namespace {
void write_png(const std::filesystem::path& path, int h, int w, int format,
               const std::vector<std::uint8_t>& data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = static_cast<png_uint_32>(format);
  if (data.size() != PNG_IMAGE_SIZE(img)) {
    throw std::invalid_argument("write_png: buffer size does not match dims");
  }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, data.data(), 0, nullptr)) {
    fail(path, "cannot write png", img);
  }
}
}  // namespace

void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& rgb) {
  write_png(path, h, w, PNG_FORMAT_RGB, rgb);
}

void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& gray) {
  write_png(path, h, w, PNG_FORMAT_GRAY, gray);
}

}  // namespace etnet::data
