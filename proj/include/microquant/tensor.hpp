#pragma once

// Dense float32 tensors plus the affine int8 quantization primitives shared
// by every other module.
//
// Encoding (gemmlowp-style):  real = scale * (q - zero_point), q in [-128,127].
// Rounding is half-away-from-zero everywhere so integer and float paths stay
// comparable across platforms. The fixed-point requantization path uses a Q31
// multiplier with an explicit right shift and 64-bit intermediates.

#include <cstdint>
#include <utility>
#include <vector>

namespace microquant {

struct Tensor {
  std::vector<int> shape;  // 1-4 dims, row-major
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> d);

  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, float value);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int rank() const { return static_cast<int>(shape.size()); }
};

struct QuantParams {
  float scale = 1.0f;
  int32_t zero_point = 0;
};

struct QuantTensor {
  std::vector<int> shape;
  std::vector<int8_t> data;
  QuantParams params;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
};

struct Range {
  float min = 0.0f;
  float max = 0.0f;

  void expand(float v) {
    if (v < min) min = v;
    if (v > max) max = v;
  }
  void merge(const Range& o) {
    if (o.min < min) min = o.min;
    if (o.max > max) max = o.max;
  }
};

int64_t shape_numel(const std::vector<int>& shape);

// Observed min/max of a buffer; throws on empty input.
Range range_of(const float* p, int64_t n);

int8_t quantize_value(float x, const QuantParams& p);
float dequantize_value(int8_t q, const QuantParams& p);

// Asymmetric mode spreads 255 steps across [min,max] extended to include 0,
// so real zero is exactly representable. Symmetric mode pins zero_point to 0
// (used for weights). A degenerate range (min == max) maps to scale 1.0 when
// the value is 0, |v|/127 otherwise.
QuantParams params_from_range(Range r, bool symmetric);

// clamp(round(acc * multiplier * 2^-(31+shift)) + out_zero_point, -128, 127)
// in pure integer arithmetic. multiplier is Q31 in [2^30, 2^31), shift >= 0.
int8_t requantize(int32_t acc, int32_t multiplier, int32_t shift,
                  int32_t out_zero_point);

// Splits a real multiplier in (0, 1) into (q31, shift) with
// q31 * 2^-(31+shift) within 2^-31 of the input. Throws outside (0, 1).
std::pair<int32_t, int32_t> decompose_multiplier(double real_multiplier);

}  // namespace microquant
