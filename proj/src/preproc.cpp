#include "lesionnet/preproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lesionnet/error.hpp"

namespace lesionnet {
namespace {

std::uint8_t clamp_round(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// cos/sin with exact values at multiples of 90 degrees.
std::pair<double, double> exact_cos_sin(double degrees) {
  const double turns = degrees / 90.0;
  if (turns == std::floor(turns)) {
    const long q = ((static_cast<long>(turns) % 4) + 4) % 4;
    constexpr std::array<std::pair<double, double>, 4> table{
        {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}}};
    return table[static_cast<std::size_t>(q)];
  }
  const double rad = degrees * std::acos(-1.0) / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

Image equalize_luminance(const Image& image) {
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  std::vector<std::uint8_t> luma(n);
  std::vector<double> cb(n), cr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = image.pixels[3 * i], g = image.pixels[3 * i + 1],
                 b = image.pixels[3 * i + 2];
    luma[i] = clamp_round(0.299 * r + 0.587 * g + 0.114 * b);
    cb[i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    cr[i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
  }
  const auto table = equalization_table(luma.data(), n);
  Image out = image;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = table[luma[i]];
    out.pixels[3 * i] = clamp_round(y + 1.402 * (cr[i] - 128.0));
    out.pixels[3 * i + 1] =
        clamp_round(y - 0.344136 * (cb[i] - 128.0) - 0.714136 * (cr[i] - 128.0));
    out.pixels[3 * i + 2] = clamp_round(y + 1.772 * (cb[i] - 128.0));
  }
  return out;
}

}  // namespace

Image resize(const Image& image, int target_w, int target_h) {
  if (target_w < 1 || target_h < 1) {
    fail(ErrorKind::kInvalidArgument, "resize: target dimensions must be >= 1, got " +
                                          std::to_string(target_w) + "x" +
                                          std::to_string(target_h));
  }
  Image out(target_w, target_h, image.channels);
  const double sx = static_cast<double>(image.width) / target_w;
  const double sy = static_cast<double>(image.height) / target_h;
  for (int y = 0; y < target_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - wx) + image.at(x1, y0, c) * wx;
        const double bottom = image.at(x0, y1, c) * (1.0 - wx) + image.at(x1, y1, c) * wx;
        out.at(x, y, c) = clamp_round(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

std::array<std::uint8_t, 256> equalization_table(const std::uint8_t* values,
                                                 std::size_t count, std::size_t stride) {
  std::array<std::uint64_t, 256> cdf{};
  for (std::size_t i = 0; i < count; ++i) ++cdf[values[i * stride]];
  for (std::size_t v = 1; v < 256; ++v) cdf[v] += cdf[v - 1];

  std::array<std::uint8_t, 256> table{};
  for (std::size_t v = 0; v < 256; ++v) table[v] = static_cast<std::uint8_t>(v);

  std::uint64_t cdf_min = 0;
  for (std::size_t v = 0; v < 256; ++v) {
    if (cdf[v] > 0) {
      cdf_min = cdf[v];
      break;
    }
  }
  const std::uint64_t denom = count - cdf_min;
  if (denom == 0) return table;  // constant channel
  for (std::size_t v = 0; v < 256; ++v) {
    if (cdf[v] < cdf_min) {
      table[v] = 0;
      continue;
    }
    // Integer half-up rounding of (cdf - cdf_min) * 255 / denom.
    const std::uint64_t num = (cdf[v] - cdf_min) * 255;
    table[v] = static_cast<std::uint8_t>((2 * num + denom) / (2 * denom));
  }
  return table;
}

Image histogram_equalize(const Image& image, EqualizeMode mode) {
  if (mode == EqualizeMode::kNone) return image;
  if (mode == EqualizeMode::kLuminance && image.channels == 3) {
    return equalize_luminance(image);
  }
  Image out = image;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (int c = 0; c < image.channels; ++c) {
    const auto table = equalization_table(image.pixels.data() + c, n,
                                          static_cast<std::size_t>(image.channels));
    for (std::size_t i = 0; i < n; ++i) {
      std::uint8_t& p = out.pixels[i * image.channels + c];
      p = table[p];
    }
  }
  return out;
}

void AugmentParams::validate() const {
  if (!(zoom > 0.0)) fail(ErrorKind::kInvalidArgument, "augment: zoom must be > 0");
  if (!(std::abs(shift_x_frac) < 1.0 && std::abs(shift_y_frac) < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "augment: shift fractions must satisfy |s| < 1");
  }
  if (!std::isfinite(rotation_deg)) {
    fail(ErrorKind::kInvalidArgument, "augment: rotation must be finite");
  }
}

AugmentParams AugmentRanges::draw(std::mt19937_64& gen) const {
  std::uniform_real_distribution<double> rot(-max_rotation_deg, max_rotation_deg);
  std::uniform_real_distribution<double> shift(-max_shift_frac, max_shift_frac);
  std::uniform_real_distribution<double> zoom(min_zoom, max_zoom);
  AugmentParams p;
  p.rotation_deg = rot(gen);
  p.shift_x_frac = shift(gen);
  p.shift_y_frac = shift(gen);
  p.zoom = zoom(gen);
  p.seed = static_cast<std::uint32_t>(gen());
  return p;
}

Image augment(const Image& image, const AugmentParams& params) {
  params.validate();
  const auto [cos_t, sin_t] = exact_cos_sin(params.rotation_deg);
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  const double tx = params.shift_x_frac * image.width;
  const double ty = params.shift_y_frac * image.height;

  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double dx = (x - cx - tx) / params.zoom;
      const double dy = (y - cy - ty) / params.zoom;
      const double sx = cx + cos_t * dx - sin_t * dy;
      const double sy = cy + sin_t * dx + cos_t * dy;
      const int ix = std::clamp(static_cast<int>(std::floor(sx + 0.5)), 0, image.width - 1);
      const int iy = std::clamp(static_cast<int>(std::floor(sy + 0.5)), 0, image.height - 1);
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(ix, iy, c);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> normalize(const Image& image) {
  Tensor<Scalar> out(Shape{static_cast<std::size_t>(image.channels),
                           static_cast<std::size_t>(image.height),
                           static_cast<std::size_t>(image.width)});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < image.channels; ++c) {
      out[c * plane + i] =
          static_cast<Scalar>(image.pixels[i * image.channels + c]) / Scalar{255};
    }
  }
  return out;
}

template Tensor<float> normalize<float>(const Image&);
template Tensor<double> normalize<double>(const Image&);

}  // namespace lesionnet
