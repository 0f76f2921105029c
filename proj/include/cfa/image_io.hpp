#pragma once

#include <filesystem>

#include "cfa/poseschema.hpp"
#include "cfa/tensor.hpp"

namespace cfa {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

/// Binary PPM (P6, 8-bit). Images are [1, 3, H, W] tensors in [0, 1];
/// values are clamped and rounded to the nearest level on write.
void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

/// Round every value to the nearest of 256 levels, as a PPM round trip would.
void quantize_8bit(Tensor& image);

// Drawing primitives on [1, 3, H, W] images; coverage is evaluated at pixel
// centres (x + 0.5, y + 0.5) and alpha-blended.
void draw_segment(Tensor& image, Point a, Point b, double width, Rgb color);
void draw_disk(Tensor& image, Point centre, double radius, Rgb color);
void fill_rect(Tensor& image, double x0, double y0, double x1, double y1, Rgb color);

}  // namespace cfa
