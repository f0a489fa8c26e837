#include "alab/png_io.hpp"

#include <png.h>

#include <cstring>

#include "alab/error.hpp"

namespace alab {

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) fail(ErrorKind::InvalidInput, "PNG export supports 1 or 3 channels");
  if (img.pixels.size() != img.width * img.height * img.channels) {
    fail(ErrorKind::InvalidInput, "PNG buffer size does not match its geometry");
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Io, path.string() + ": " + msg);
  }
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorKind::Io, path.string() + ": " + image.message);
  }
  Image8 out;
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  out.width = image.width;
  out.height = image.height;
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Io, path.string() + ": " + msg);
  }
  return out;
}

}  // namespace alab
