#include "microquant/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace microquant {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

static void check_shape(const std::vector<int>& shape, size_t data_len) {
  if (shape.empty() || shape.size() > 4)
    throw std::invalid_argument("Tensor: shape must have 1-4 dimensions");
  for (int d : shape)
    if (d < 1) throw std::invalid_argument("Tensor: dimensions must be >= 1");
  if (shape_numel(shape) != static_cast<int64_t>(data_len))
    throw std::invalid_argument(
        "Tensor: data length " + std::to_string(data_len) +
        " does not match shape product " + std::to_string(shape_numel(shape)));
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  check_shape(shape, data.size());
}

Tensor Tensor::zeros(std::vector<int> s) { return full(std::move(s), 0.0f); }

Tensor Tensor::full(std::vector<int> s, float value) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(static_cast<size_t>(shape_numel(t.shape)), value);
  check_shape(t.shape, t.data.size());
  return t;
}

Range range_of(const float* p, int64_t n) {
  if (n <= 0) throw std::invalid_argument("range_of: empty buffer");
  Range r{p[0], p[0]};
  for (int64_t i = 1; i < n; ++i) r.expand(p[i]);
  return r;
}

static double round_half_away(double x) {
  return x < 0.0 ? std::ceil(x - 0.5) : std::floor(x + 0.5);
}

int8_t quantize_value(float x, const QuantParams& p) {
  // clamp in double so huge inputs saturate instead of overflowing the cast
  double q = round_half_away(static_cast<double>(x) / p.scale) + p.zero_point;
  if (q < -128.0) q = -128.0;
  if (q > 127.0) q = 127.0;
  return static_cast<int8_t>(q);
}

float dequantize_value(int8_t q, const QuantParams& p) {
  return p.scale * static_cast<float>(static_cast<int32_t>(q) - p.zero_point);
}

QuantParams params_from_range(Range r, bool symmetric) {
  if (!std::isfinite(r.min) || !std::isfinite(r.max))
    throw std::invalid_argument("params_from_range: non-finite range");
  if (r.min > r.max)
    throw std::invalid_argument("params_from_range: min > max");

  QuantParams p;
  if (r.min == r.max) {
    p.scale = r.min == 0.0f ? 1.0f : std::abs(r.min) / 127.0f;
    p.zero_point = 0;
    return p;
  }
  if (symmetric) {
    p.scale = std::max(std::abs(r.min), std::abs(r.max)) / 127.0f;
    p.zero_point = 0;
    return p;
  }
  r.expand(0.0f);
  p.scale = (r.max - r.min) / 255.0f;
  double zp = round_half_away(-128.0 - static_cast<double>(r.min) / p.scale);
  if (zp < -128.0) zp = -128.0;
  if (zp > 127.0) zp = 127.0;
  p.zero_point = static_cast<int32_t>(zp);
  return p;
}

int8_t requantize(int32_t acc, int32_t multiplier, int32_t shift,
                  int32_t out_zero_point) {
  const int total_shift = 31 + shift;
  int64_t prod = static_cast<int64_t>(acc) * multiplier;
  int64_t scaled;
  if (total_shift > 62) {
    scaled = 0;  // |prod| < 2^62, rounds to zero at this magnitude
  } else {
    const int64_t rounding = int64_t{1} << (total_shift - 1);
    scaled = prod >= 0 ? (prod + rounding) >> total_shift
                       : -((-prod + rounding) >> total_shift);
  }
  int64_t q = scaled + out_zero_point;
  if (q < -128) q = -128;
  if (q > 127) q = 127;
  return static_cast<int8_t>(q);
}

std::pair<int32_t, int32_t> decompose_multiplier(double real_multiplier) {
  if (!(real_multiplier > 0.0 && real_multiplier < 1.0))
    throw std::invalid_argument("decompose_multiplier: multiplier outside (0, 1)");

  int exp = 0;
  double mant = std::frexp(real_multiplier, &exp);  // mant in [0.5, 1)
  auto q = static_cast<int64_t>(std::round(mant * (int64_t{1} << 31)));
  int shift = -exp;
  if (q == (int64_t{1} << 31)) {
    q >>= 1;
    --shift;
  }
  if (shift < 0) {  // real_multiplier rounded up to 1.0; saturate just below
    q = (int64_t{1} << 31) - 1;
    shift = 0;
  }
  return {static_cast<int32_t>(q), shift};
}

}  // namespace microquant
