#include "guap/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace guap {

std::optional<Tensor<float>> read_png(const std::filesystem::path& path, int64_t channels) {
  require(channels == 1 || channels == 3, "read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) return std::nullopt;
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    return std::nullopt;
  }
  const int64_t h = img.height, w = img.width;
  Tensor<float> out({channels, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < channels; ++c)
        out[(c * h + i) * w + j] = static_cast<float>(buf[(i * w + j) * channels + c]) / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image, int64_t scale) {
  require(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3), "write_png expects (1|3, h, w)");
  require(scale >= 1, "write_png: scale must be >= 1");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t oh = h * scale, ow = w * scale;
  std::vector<uint8_t> buf(static_cast<size_t>(oh * ow * c));
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j)
      for (int64_t k = 0; k < c; ++k) {
        const float v = std::clamp(image[(k * h + i / scale) * w + j / scale], 0.0f, 1.0f);
        buf[(i * ow + j) * c + k] = static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(ow);
  img.height = static_cast<png_uint_32>(oh);
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int64_t out_h, int64_t out_w) {
  require(image.rank() == 3, "resize_bilinear expects (c, h, w)");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor<float> out({c, out_h, out_w});
  auto src_coord = [](int64_t o, int64_t in, int64_t outn) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (int64_t i = 0; i < out_h; ++i) {
    const double y = src_coord(i, h, out_h);
    const auto y0 = static_cast<int64_t>(std::floor(y));
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (int64_t j = 0; j < out_w; ++j) {
      const double x = src_coord(j, w, out_w);
      const auto x0 = static_cast<int64_t>(std::floor(x));
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      for (int64_t k = 0; k < c; ++k) {
        const float* p = image.data() + k * h * w;
        const double v = (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                         fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
        out[(k * out_h + i) * out_w + j] = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace guap
