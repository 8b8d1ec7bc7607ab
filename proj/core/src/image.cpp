#include "lcms/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lcms::sim {

namespace {

constexpr Rgb rgb8(int r, int g, int b) {
  return {static_cast<float>(r) / 255.0f, static_cast<float>(g) / 255.0f,
          static_cast<float>(b) / 255.0f};
}

bool covers(const Bowl& bowl, const Eigen::Vector2d& p) {
  const double r = bowl.edge() / 2.0;
  const Eigen::Vector2d d = p - bowl.position;
  if (bowl.shape == Shape::Round) return d.squaredNorm() <= r * r;
  return std::abs(d.x()) <= r && std::abs(d.y()) <= r;
}

}  // namespace

Rgb palette(Color c) {
  switch (c) {
    case Color::Red: return rgb8(220, 30, 30);
    case Color::Green: return rgb8(30, 190, 40);
    case Color::Blue: return rgb8(30, 60, 220);
    case Color::Yellow: return rgb8(240, 220, 30);
    case Color::Pink: return rgb8(250, 130, 190);
  }
  return rgb8(0, 0, 0);
}

Rgb table_color() { return rgb8(128, 128, 128); }
Rgb cube_color() { return rgb8(60, 60, 60); }

Eigen::Vector2d Camera::pixel_center(int row, int col) const {
  return {-table_width / 2 + (col + 0.5) * table_width / width,
          table_height / 2 - (row + 0.5) * table_height / height};
}

Eigen::Vector2d Camera::to_pixel(const Eigen::Vector2d& p) const {
  return {(p.x() + table_width / 2) * width / table_width - 0.5,
          (table_height / 2 - p.y()) * height / table_height - 0.5};
}

Image render(const Scene& scene, int height, int width) {
  if (height < 1 || width < 1) throw InvalidArgument("render: image size must be positive");
  const Camera camera{scene.table.width, scene.table.height, width, height};
  Image image(width, height);
  const Rgb background = table_color();
  const Rgb cube = cube_color();
  const double cube_half = kCubeEdge / 2.0;
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const Eigen::Vector2d p = camera.pixel_center(row, col);
      Rgb color = background;
      for (const auto& bowl : scene.bowls) {
        if (covers(bowl, p)) {
          color = palette(bowl.color);
          break;
        }
      }
      const Eigen::Vector2d dc = p - scene.cube;
      if (std::abs(dc.x()) <= cube_half && std::abs(dc.y()) <= cube_half) color = cube;
      for (int c = 0; c < 3; ++c) image.at(row, col, c) = color[static_cast<std::size_t>(c)];
    }
  }
  return image;
}

namespace {

std::vector<png_byte> to_bytes(const Image& image) {
  std::vector<png_byte> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    bytes[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  return bytes;
}

}  // namespace

std::vector<unsigned char> encode_png(const Image& image) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  const auto bytes = to_bytes(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, bytes.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + png.message);
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, bytes.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + png.message);
  out.resize(size);
  return out;
}

void save_png(const std::string& path, const Image& image) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  const auto bytes = to_bytes(image);
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write png " + path + ": " + png.message);
}

namespace {

Image finish_read(png_image& png, const std::string& what) {
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode png " + what + ": " + png.message);
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < bytes.size(); ++i) image.data[i] = bytes[i] / 255.0f;
  return image;
}

}  // namespace

Image load_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot read png " + path + ": " + png.message);
  return finish_read(png, path);
}

Image decode_png(const std::vector<unsigned char>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw IoError(std::string("cannot read png from memory: ") + png.message);
  return finish_read(png, "buffer");
}

}  // namespace lcms::sim
