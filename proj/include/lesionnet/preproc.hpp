#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>

#include "lesionnet/image.hpp"
#include "lesionnet/tensor.hpp"

namespace lesionnet {

// Bilinear resampling to exact target dimensions (pixel-center aligned,
// edge-clamped, rounded half-up).
Image resize(const Image& image, int target_w, int target_h);

enum class EqualizeMode {
  kNone,
  kPerChannel,  // each channel remapped through its own cumulative histogram
  kLuminance,   // luma equalized in YCbCr space, chroma kept
};

// v -> round_half_up((cdf(v) - cdf_min) / (N - cdf_min) * 255) per channel.
// A constant channel is returned unchanged.
Image histogram_equalize(const Image& image,
                         EqualizeMode mode = EqualizeMode::kPerChannel);

// The 256-entry lookup table histogram_equalize applies to one channel.
// `values` holds the channel's intensities.
std::array<std::uint8_t, 256> equalization_table(const std::uint8_t* values,
                                                 std::size_t count,
                                                 std::size_t stride = 1);

struct AugmentParams {
  double rotation_deg = 0.0;  // counterclockwise as displayed
  double shift_x_frac = 0.0;  // fraction of width, positive moves content right
  double shift_y_frac = 0.0;  // fraction of height, positive moves content down
  double zoom = 1.0;          // > 1 magnifies
  std::uint32_t seed = 0;

  void validate() const;
};

// Sampling ranges for random augmentation.
struct AugmentRanges {
  double max_rotation_deg = 20.0;
  double max_shift_frac = 0.10;
  double min_zoom = 0.9;
  double max_zoom = 1.1;

  AugmentParams draw(std::mt19937_64& gen) const;
};

// Rotation about the center, then zoom about the center, then translation.
// Each output pixel is inverse-mapped and sampled nearest-neighbor; samples
// outside the source take the nearest edge pixel.
Image augment(const Image& image, const AugmentParams& params);

// HxWxC bytes -> CxHxW values in [0, 1].
template <typename Scalar>
Tensor<Scalar> normalize(const Image& image);

}  // namespace lesionnet
