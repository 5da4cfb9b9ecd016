#pragma once

// 8-bit grayscale rasters, the five resize interpolations, and the two
// augmentation regimes.
//
// Geometry: destination pixel (dx, dy) samples the source at
// ((dx+0.5)*sw/dw - 0.5, (dy+0.5)*sh/dh - 0.5) (half-pixel centers). Resize
// taps clamp to the edge; rotation fills out-of-bounds with black. Pixel
// outputs are rounded half-away-from-zero and clamped to [0, 255].

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "microquant/tensor.hpp"

namespace microquant {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, width*height

  Image() = default;
  Image(int w, int h, uint8_t fill = 0);
  Image(int w, int h, std::vector<uint8_t> px);

  uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

enum class InterpMethod { kNearest, kBilinear, kArea, kBicubic, kLanczos4 };

inline constexpr std::array<InterpMethod, 5> kAllInterpMethods = {
    InterpMethod::kNearest, InterpMethod::kBilinear, InterpMethod::kArea,
    InterpMethod::kBicubic, InterpMethod::kLanczos4};

const char* interp_name(InterpMethod m);
InterpMethod interp_from_name(const std::string& name);  // throws on unknown

struct AugmentParams {
  double rotation_degrees_max = 20.0;
  int crop_size = 20;
  int target_size = 28;
  double contrast_jitter = 0.1;  // factor drawn from [1-j, 1+j]
  uint64_t seed = 0;
};

Image resize(const Image& img, int out_w, int out_h, InterpMethod m);

// Positive degrees rotate the content counterclockwise (origin top-left).
Image rotate(const Image& img, double degrees);

Image crop(const Image& img, int x, int y, int w, int h);

// pixel -> clamp(round(128 + factor * (pixel - 128)), 0, 255)
Image adjust_contrast(const Image& img, double factor);

// Seeded rotate -> random crop -> bilinear resize -> contrast jitter.
Image augment_standard(const Image& img, const AugmentParams& p);

// The same image resized with all five kernels, in enum order.
std::vector<Image> augment_interpolation(const Image& img, int target);

// [h, w, 1] tensor with values pixel/255 in [0, 1].
Tensor normalize(const Image& img);

// Binary PGM (P5, maxval 255). load_image also accepts P6 and converts to
// luma with BT.601 weights.
Image load_image(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

}  // namespace microquant
