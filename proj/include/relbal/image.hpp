#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/rng.hpp"

namespace relbal {

// H x W x C array of reals in [0,1]. No codec support; pixel arrays come
// from the text fixture format below or are built in memory.
struct ImageArray {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;  // row-major, channel innermost

  ImageArray() = default;
  ImageArray(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

struct AugmentConfig {
  std::size_t resize_h = 256;
  std::size_t resize_w = 256;
  std::size_t crop_h = 224;
  std::size_t crop_w = 224;
  double flip_probability = 0.5;
};

namespace detail {
// Half-pixel center mapping, clamped to the source grid.
inline double source_coord(std::size_t dst, std::size_t dst_size, std::size_t src_size) {
  const double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
  const double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(src_size - 1));
}
}  // namespace detail

// Two-direction linear interpolation over the four surrounding source
// pixels, with clamped half-pixel-center coordinate mapping.
inline ImageArray bilinear_resize(const ImageArray& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    fail(ErrorKind::invalid_input, "bilinear_resize: zero output dimension");
  ImageArray out(out_h, out_w, img.channels);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double sy = detail::source_coord(oy, out_h, img.height);
    const std::size_t y1 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y2 = std::min(y1 + 1, img.height - 1);
    const double fy = sy - static_cast<double>(y1);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double sx = detail::source_coord(ox, out_w, img.width);
      const std::size_t x1 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x2 = std::min(x1 + 1, img.width - 1);
      const double fx = sx - static_cast<double>(x1);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double q11 = img.at(y1, x1, c);
        const double q12 = img.at(y2, x1, c);
        const double q21 = img.at(y1, x2, c);
        const double q22 = img.at(y2, x2, c);
        const double top = q11 * (1.0 - fx) + q21 * fx;
        const double bot = q12 * (1.0 - fx) + q22 * fx;
        out.at(oy, ox, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

// Column j -> column n+1-j (1-based), per channel.
inline ImageArray horizontal_flip(const ImageArray& img) {
  ImageArray out(img.height, img.width, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

// Contiguous window at a uniformly random valid offset. No padding: a
// crop larger than the image is an error.
inline ImageArray random_crop(const ImageArray& img, std::size_t crop_h, std::size_t crop_w,
                              Rng& rng) {
  if (crop_h > img.height || crop_w > img.width)
    fail(ErrorKind::invalid_input, "random_crop: crop " + std::to_string(crop_h) + "x" +
                                       std::to_string(crop_w) + " exceeds image " +
                                       std::to_string(img.height) + "x" +
                                       std::to_string(img.width));
  const std::size_t oy = static_cast<std::size_t>(rng.next_below(img.height - crop_h + 1));
  const std::size_t ox = static_cast<std::size_t>(rng.next_below(img.width - crop_w + 1));
  ImageArray out(crop_h, crop_w, img.channels);
  for (std::size_t y = 0; y < crop_h; ++y)
    for (std::size_t x = 0; x < crop_w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(oy + y, ox + x, c);
  return out;
}

// resize -> optional flip -> random crop. The flip draw is consumed only
// when flip_probability > 0, so a zero probability leaves the crop draw
// sequence unchanged.
inline ImageArray augment_pipeline(const ImageArray& img, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.flip_probability < 0.0 || cfg.flip_probability > 1.0)
    fail(ErrorKind::invalid_input, "augment_pipeline: flip probability outside [0,1]");
  ImageArray out = bilinear_resize(img, cfg.resize_h, cfg.resize_w);
  if (cfg.flip_probability > 0.0 && rng.next_double() < cfg.flip_probability)
    out = horizontal_flip(out);
  return random_crop(out, cfg.crop_h, cfg.crop_w, rng);
}

// Text fixture format: "height width channels" on the first line, then
// whitespace-separated pixel values. Values are written with max_digits10
// precision, so write/read round-trips bit-exactly.
inline void write_image_text(const ImageArray& img, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << img.height << " " << img.width << " " << img.channels << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out << img.pixels[i] << ((i + 1) % (img.width * img.channels) == 0 ? '\n' : ' ');
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline ImageArray read_image_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  std::size_t h = 0, w = 0, c = 0;
  if (!(in >> h >> w >> c) || h == 0 || w == 0 || c == 0)
    fail(ErrorKind::parse, "bad image header in " + path);
  ImageArray img(h, w, c);
  for (double& v : img.pixels)
    if (!(in >> v)) fail(ErrorKind::parse, "truncated pixel data in " + path);
  return img;
}

}  // namespace relbal
