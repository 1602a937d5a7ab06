#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace lesionnet {

// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PPM (P6) / PGM (P5), maxval 255.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const Image& image, const std::filesystem::path& path);

Image decode_png(const std::filesystem::path& path);
Image decode_jpeg(const std::filesystem::path& path);

// Dispatches on the file signature.
Image read_image(const std::filesystem::path& path);

// Grayscale images are expanded to three identical channels.
Image to_rgb(const Image& image);

}  // namespace lesionnet
