#include "cfa/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cfa/errors.hpp"

namespace cfa {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void blend(Tensor& img, int x, int y, double alpha, Rgb c) {
  if (alpha <= 0 || x < 0 || y < 0 || x >= img.w() || y >= img.h()) return;
  alpha = std::min(alpha, 1.0);
  const double col[3] = {c.r, c.g, c.b};
  for (int ch = 0; ch < 3; ++ch) {
    double& v = img.at(0, ch, y, x);
    v = v * (1 - alpha) + col[ch] * alpha;
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

}  // namespace

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("write_ppm expects [1, 3, H, W]");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << image.w() << " " << image.h() << "\n255\n";
  std::string row(static_cast<std::size_t>(image.w()) * 3, '\0');
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < 3; ++c) row[3 * x + c] = static_cast<char>(to_byte(image.at(0, c, y, x)));
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError(path.string() + ": unsupported PPM header");
  }
  in.get();
  Tensor img(1, 3, h, w);
  std::string row(static_cast<std::size_t>(w) * 3, '\0');
  for (int y = 0; y < h; ++y) {
    if (!in.read(row.data(), static_cast<std::streamsize>(row.size()))) {
      throw ParseError(path.string() + ": truncated pixel data");
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<unsigned char>(row[3 * x + c]) / 255.0;
      }
    }
  }
  return img;
}

void quantize_8bit(Tensor& image) {
  for (double& v : image.values()) v = to_byte(v) / 255.0;
}

void draw_segment(Tensor& image, Point a, Point b, double width, Rgb color) {
  const double r = width / 2.0;
  const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - r - 1));
  const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + r + 1));
  const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - r - 1));
  const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + r + 1));
  for (int y = std::max(y0, 0); y <= std::min(y1, image.h() - 1); ++y) {
    for (int x = std::max(x0, 0); x <= std::min(x1, image.w() - 1); ++x) {
      const double d = segment_distance({x + 0.5, y + 0.5}, a, b);
      blend(image, x, y, std::clamp(r + 0.5 - d, 0.0, 1.0), color);
    }
  }
}

void draw_disk(Tensor& image, Point c, double radius, Rgb color) {
  const int x0 = static_cast<int>(std::floor(c.x - radius - 1));
  const int x1 = static_cast<int>(std::ceil(c.x + radius + 1));
  const int y0 = static_cast<int>(std::floor(c.y - radius - 1));
  const int y1 = static_cast<int>(std::ceil(c.y + radius + 1));
  for (int y = std::max(y0, 0); y <= std::min(y1, image.h() - 1); ++y) {
    for (int x = std::max(x0, 0); x <= std::min(x1, image.w() - 1); ++x) {
      const double d = std::hypot(x + 0.5 - c.x, y + 0.5 - c.y);
      blend(image, x, y, std::clamp(radius + 0.5 - d, 0.0, 1.0), color);
    }
  }
}

void fill_rect(Tensor& image, double x0, double y0, double x1, double y1, Rgb color) {
  for (int y = std::max(0, static_cast<int>(std::floor(y0)));
       y < std::min(image.h(), static_cast<int>(std::ceil(y1))); ++y) {
    for (int x = std::max(0, static_cast<int>(std::floor(x0)));
         x < std::min(image.w(), static_cast<int>(std::ceil(x1))); ++x) {
      if (x + 0.5 >= x0 && x + 0.5 < x1 && y + 0.5 >= y0 && y + 0.5 < y1) {
        blend(image, x, y, 1.0, color);
      }
    }
  }
}

}  // namespace cfa
