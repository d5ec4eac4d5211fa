#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "onet/tensor.hpp"

namespace onet {

// Grayscale raster, 8 or 16 bits per sample. Binary masks are stored as
// depth-8 images with values in {0,1}.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int depth = 8;  // bits per sample
  std::vector<std::uint16_t> pixels;  // row-major

  std::uint16_t maxval() const {
    return static_cast<std::uint16_t>((1u << depth) - 1u);
  }
  std::uint16_t& at(std::int64_t y, std::int64_t x) {
    return pixels[static_cast<std::size_t>(y * width + x)];
  }
  std::uint16_t at(std::int64_t y, std::int64_t x) const {
    return pixels[static_cast<std::size_t>(y * width + x)];
  }
};

struct Rect {
  std::int64_t x = 0, y = 0, w = 0, h = 0;
};

namespace detail {

inline int pgm_next_token(std::istream& is, std::string& tok) {
  tok.clear();
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) break;
  }
  if (c == EOF) return 0;
  do {
    tok.push_back(static_cast<char>(c));
  } while ((c = is.get()) != EOF && !std::isspace(c));
  return 1;
}

}  // namespace detail

// Binary PGM (P5); 16-bit samples are big-endian per the PGM convention.
inline Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("read_pgm: cannot open '" + path + "'");
  std::string tok;
  if (!detail::pgm_next_token(is, tok) || tok != "P5") {
    fail("read_pgm: '" + path + "' is not a binary PGM (P5)");
  }
  std::int64_t w = 0, h = 0, maxv = 0;
  auto next_int = [&](std::int64_t& out, const char* what) {
    if (!detail::pgm_next_token(is, tok)) {
      fail(std::string("read_pgm: truncated header (") + what + ")");
    }
    out = std::stoll(tok);
  };
  next_int(w, "width");
  next_int(h, "height");
  next_int(maxv, "maxval");
  if (w < 1 || h < 1 || maxv < 1 || maxv > 65535) {
    fail("read_pgm: bad header in '" + path + "'");
  }

  Image img;
  img.width = w;
  img.height = h;
  img.depth = maxv > 255 ? 16 : 8;
  img.pixels.resize(static_cast<std::size_t>(w * h));
  if (maxv > 255) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * 2));
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size()))) {
      fail("read_pgm: truncated pixel data in '" + path + "'");
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) |
                                                 buf[2 * i + 1]);
    }
  } else {
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h));
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size()))) {
      fail("read_pgm: truncated pixel data in '" + path + "'");
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buf[i];
  }
  return img;
}

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("write_pgm: cannot open '" + path + "'");
  os << "P5\n" << img.width << " " << img.height << "\n" << int(img.maxval())
     << "\n";
  if (img.depth > 8) {
    for (auto v : img.pixels) {
      os.put(static_cast<char>(v >> 8));
      os.put(static_cast<char>(v & 0xFF));
    }
  } else {
    for (auto v : img.pixels) os.put(static_cast<char>(v & 0xFF));
  }
  if (!os) fail("write_pgm: write failed for '" + path + "'");
}

// Reads just width/height from the PGM header.
inline std::pair<std::int64_t, std::int64_t> pgm_dims(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("pgm_dims: cannot open '" + path + "'");
  std::string tok;
  if (!detail::pgm_next_token(is, tok) || tok != "P5") {
    fail("pgm_dims: '" + path + "' is not a binary PGM (P5)");
  }
  std::int64_t w = 0, h = 0;
  if (!detail::pgm_next_token(is, tok)) fail("pgm_dims: truncated header");
  w = std::stoll(tok);
  if (!detail::pgm_next_token(is, tok)) fail("pgm_dims: truncated header");
  h = std::stoll(tok);
  return {w, h};
}

// {0,255}-style mask PGM mapped to {0,1}.
inline Image read_mask(const std::string& path) {
  Image m = read_pgm(path);
  m.depth = 8;
  for (auto& v : m.pixels) v = v > 0 ? 1 : 0;
  return m;
}

inline void write_mask(const std::string& path, const Image& mask) {
  Image m = mask;
  m.depth = 8;
  for (auto& v : m.pixels) v = v > 0 ? 255 : 0;
  write_pgm(path, m);
}

// size x size crop centered on (cx, cy), shifted to maximally overlap the
// image; window area outside the image is zero-filled.
inline Image extract_roi(const Image& img, std::int64_t cx, std::int64_t cy,
                         std::int64_t size = 1024) {
  if (size > 2 * img.width && size > 2 * img.height) {
    fail("extract_roi: size " + std::to_string(size) +
         " degenerate against image " + std::to_string(img.width) + "x" +
         std::to_string(img.height));
  }
  auto origin = [&](std::int64_t c, std::int64_t extent) {
    const std::int64_t want = c - size / 2;
    const std::int64_t lo = std::min<std::int64_t>(0, extent - size);
    const std::int64_t hi = std::max<std::int64_t>(0, extent - size);
    return std::clamp(want, lo, hi);
  };
  const std::int64_t x0 = origin(cx, img.width);
  const std::int64_t y0 = origin(cy, img.height);

  Image out;
  out.width = size;
  out.height = size;
  out.depth = img.depth;
  out.pixels.assign(static_cast<std::size_t>(size * size), 0);
  for (std::int64_t y = 0; y < size; ++y) {
    const std::int64_t sy = y0 + y;
    if (sy < 0 || sy >= img.height) continue;
    for (std::int64_t x = 0; x < size; ++x) {
      const std::int64_t sx = x0 + x;
      if (sx < 0 || sx >= img.width) continue;
      out.at(y, x) = img.at(sy, sx);
    }
  }
  return out;
}

// Window origin used by extract_roi, needed to map coordinates into the crop.
inline std::pair<std::int64_t, std::int64_t> roi_origin(const Image& img,
                                                        std::int64_t cx,
                                                        std::int64_t cy,
                                                        std::int64_t size) {
  auto origin = [&](std::int64_t c, std::int64_t extent) {
    const std::int64_t want = c - size / 2;
    const std::int64_t lo = std::min<std::int64_t>(0, extent - size);
    const std::int64_t hi = std::max<std::int64_t>(0, extent - size);
    return std::clamp(want, lo, hi);
  };
  return {origin(cx, img.width), origin(cy, img.height)};
}

// out(v) = round((L-1) * CDF(v)); when a domain mask is supplied only its
// nonzero pixels enter the histogram (the mapping is still applied
// everywhere).
inline Image hist_equalize(const Image& img, const Image* domain = nullptr) {
  const std::int64_t levels = std::int64_t(1) << img.depth;
  std::vector<std::int64_t> hist(static_cast<std::size_t>(levels), 0);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (domain && domain->pixels[i] == 0) continue;
    ++hist[img.pixels[i]];
    ++total;
  }
  if (total == 0) return img;

  std::vector<std::uint16_t> lut(static_cast<std::size_t>(levels), 0);
  std::int64_t cum = 0;
  for (std::int64_t v = 0; v < levels; ++v) {
    cum += hist[static_cast<std::size_t>(v)];
    const double cdf = static_cast<double>(cum) / static_cast<double>(total);
    lut[static_cast<std::size_t>(v)] = static_cast<std::uint16_t>(
        std::llround(static_cast<double>(levels - 1) * cdf));
  }

  Image out = img;
  for (auto& v : out.pixels) v = lut[v];
  return out;
}

enum class Interp { Bilinear, Nearest };

// Rotation about the image center by `angle` degrees (counter-clockwise in
// image coordinates); destination pixels are inverse-mapped and sources
// outside the original domain contribute zero.
inline Image rotate(const Image& img, double angle_deg,
                    Interp interp = Interp::Bilinear) {
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(rad);
  const double sa = std::sin(rad);
  const double cx = static_cast<double>(img.width - 1) / 2.0;
  const double cy = static_cast<double>(img.height - 1) / 2.0;

  Image out = img;
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      // inverse rotation of the destination point
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;

      double value = 0.0;
      if (interp == Interp::Nearest) {
        const std::int64_t ix = static_cast<std::int64_t>(std::llround(sx));
        const std::int64_t iy = static_cast<std::int64_t>(std::llround(sy));
        if (ix >= 0 && ix < img.width && iy >= 0 && iy < img.height) {
          value = img.at(iy, ix);
        }
      } else {
        const double fx0 = std::floor(sx);
        const double fy0 = std::floor(sy);
        const std::int64_t x0 = static_cast<std::int64_t>(fx0);
        const std::int64_t y0 = static_cast<std::int64_t>(fy0);
        const double wx = sx - fx0;
        const double wy = sy - fy0;
        auto sample = [&](std::int64_t yy, std::int64_t xx) -> double {
          if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height) {
            return 0.0;
          }
          return img.at(yy, xx);
        };
        value = (1.0 - wy) * ((1.0 - wx) * sample(y0, x0) +
                              wx * sample(y0, x0 + 1)) +
                wy * ((1.0 - wx) * sample(y0 + 1, x0) +
                      wx * sample(y0 + 1, x0 + 1));
      }
      out.at(y, x) = static_cast<std::uint16_t>(std::clamp<std::int64_t>(
          std::llround(value), 0, img.maxval()));
    }
  }
  return out;
}

// Forward-rotates a point with the same convention as rotate().
inline std::pair<double, double> rotate_point(double px, double py,
                                              double angle_deg, double w,
                                              double h) {
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(rad);
  const double sa = std::sin(rad);
  const double cx = (w - 1.0) / 2.0;
  const double cy = (h - 1.0) / 2.0;
  const double dx = px - cx;
  const double dy = py - cy;
  return {ca * dx - sa * dy + cx, sa * dx + ca * dy + cy};
}

// Axis-aligned bounding box of a rotated rectangle, clipped to the image.
inline Rect rotate_rect_bbox(const Rect& r, double angle_deg, std::int64_t w,
                             std::int64_t h) {
  double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
  const double xs[2] = {static_cast<double>(r.x),
                        static_cast<double>(r.x + r.w - 1)};
  const double ys[2] = {static_cast<double>(r.y),
                        static_cast<double>(r.y + r.h - 1)};
  for (double px : xs) {
    for (double py : ys) {
      auto [rx, ry] = rotate_point(px, py, angle_deg, static_cast<double>(w),
                                   static_cast<double>(h));
      min_x = std::min(min_x, rx);
      min_y = std::min(min_y, ry);
      max_x = std::max(max_x, rx);
      max_y = std::max(max_y, ry);
    }
  }
  Rect out;
  out.x = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(min_x)));
  out.y = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(min_y)));
  const std::int64_t x1 =
      std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(max_x)));
  const std::int64_t y1 =
      std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(max_y)));
  out.w = std::max<std::int64_t>(0, x1 - out.x + 1);
  out.h = std::max<std::int64_t>(0, y1 - out.y + 1);
  return out;
}

inline Image remove_markers(const Image& img, const std::vector<Rect>& rects) {
  Image out = img;
  for (const auto& r : rects) {
    const std::int64_t y1 = std::min(img.height, r.y + r.h);
    const std::int64_t x1 = std::min(img.width, r.x + r.w);
    for (std::int64_t y = std::max<std::int64_t>(0, r.y); y < y1; ++y) {
      for (std::int64_t x = std::max<std::int64_t>(0, r.x); x < x1; ++x) {
        out.at(y, x) = 0;
      }
    }
  }
  return out;
}

// Values scaled to [0,1] by 1/(2^depth - 1).
template <typename T>
Tensor<T> to_tensor(const Image& img) {
  Tensor<T> t(Shape{1, 1, img.height, img.width});
  const T scale = T(1) / static_cast<T>(img.maxval());
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(img.pixels[static_cast<std::size_t>(i)]) * scale;
  }
  return t;
}

template <typename T>
Tensor<T> mask_to_tensor(const Image& mask) {
  Tensor<T> t(Shape{1, 1, mask.height, mask.width});
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = mask.pixels[static_cast<std::size_t>(i)] > 0 ? T(1) : T(0);
  }
  return t;
}

}  // namespace onet
