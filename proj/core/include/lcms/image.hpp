#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "lcms/scene.hpp"

namespace lcms::sim {

/// Row-major H x W x 3 image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  float& at(int row, int col, int channel) {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  float at(int row, int col, int channel) const {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  std::array<float, 3> pixel(int row, int col) const {
    return {at(row, col, 0), at(row, col, 1), at(row, col, 2)};
  }
  bool operator==(const Image&) const = default;
};

using Rgb = std::array<float, 3>;

/// Palette entries are multiples of 1/255 so PNG storage is lossless.
Rgb palette(Color c);
Rgb table_color();
Rgb cube_color();

/// Orthographic top-down view covering exactly the table.
struct Camera {
  double table_width;
  double table_height;
  int width;
  int height;

  Eigen::Vector2d pixel_center(int row, int col) const;
  /// Continuous pixel coordinates (col, row) of a table point.
  Eigen::Vector2d to_pixel(const Eigen::Vector2d& table_xy) const;
};

/// Bowls are filled discs or axis-aligned squares of the bowl's edge length;
/// the cube is a gray square drawn last. No anti-aliasing.
Image render(const Scene& scene, int height = 64, int width = 64);

void save_png(const std::string& path, const Image& image);
Image load_png(const std::string& path);
std::vector<unsigned char> encode_png(const Image& image);
Image decode_png(const std::vector<unsigned char>& bytes);

}  // namespace lcms::sim
