#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "microquant/rng.hpp"
#include "microquant/tensor.hpp"

using namespace microquant;

namespace {

// independent float reference for the fixed-point requantize path
int clamped_float_requant(int32_t acc, double real_mult, int32_t zp) {
  double v = std::round(static_cast<double>(acc) * real_mult) + zp;
  if (v < -128) v = -128;
  if (v > 127) v = 127;
  return static_cast<int>(v);
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  CHECK_NOTHROW(Tensor({2, 3}, std::vector<float>(6, 0.0f)));
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5, 0.0f)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}, std::vector<float>(1, 0.0f)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0}, {}), std::invalid_argument);
  CHECK(Tensor::zeros({2, 2, 2}).numel() == 8);
}

TEST_CASE("quantize_value examples") {
  CHECK(quantize_value(0.0f, {1.0f, 0}) == 0);
  CHECK(quantize_value(1.28f, {0.01f, -128}) == 0);
  CHECK(quantize_value(5.0f, {0.01f, -128}) == 127);
}

TEST_CASE("dequantize_value examples") {
  CHECK(dequantize_value(0, {1.0f, 0}) == 0.0f);
  CHECK(dequantize_value(0, {0.01f, -128}) == doctest::Approx(1.28f));
  CHECK(dequantize_value(-128, {0.01f, -128}) == 0.0f);
}

TEST_CASE("params_from_range examples") {
  QuantParams p = params_from_range({0.0f, 2.55f}, false);
  CHECK(p.scale == doctest::Approx(0.01f));
  CHECK(p.zero_point == -128);

  p = params_from_range({-1.0f, 1.0f}, true);
  CHECK(p.scale == doctest::Approx(1.0f / 127.0f));
  CHECK(p.zero_point == 0);

  p = params_from_range({0.0f, 0.0f}, false);
  CHECK(p.scale == 1.0f);
  CHECK(p.zero_point == 0);

  p = params_from_range({3.0f, 3.0f}, false);  // degenerate nonzero
  CHECK(p.scale == doctest::Approx(3.0f / 127.0f));
  CHECK(p.zero_point == 0);

  CHECK_THROWS_AS(params_from_range({0.0f, std::numeric_limits<float>::infinity()}, false),
                  std::invalid_argument);
}

TEST_CASE("round trip bounded by half a quantum") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const float a = static_cast<float>(rng.uniform(-50.0, 50.0));
    const float b = static_cast<float>(rng.uniform(-50.0, 50.0));
    Range r{std::min(a, b), std::max(a, b)};
    const QuantParams p = params_from_range(r, trial % 2 == 0);
    const float x = static_cast<float>(rng.uniform(r.min, r.max));
    const float back = dequantize_value(quantize_value(x, p), p);
    CHECK(std::abs(back - x) <= p.scale / 2.0f + 1e-6f);
  }
}

TEST_CASE("quantize is monotone and saturating") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const QuantParams p = params_from_range(
        {static_cast<float>(rng.uniform(-10.0, 0.0)), static_cast<float>(rng.uniform(0.0, 10.0))},
        false);
    int prev = -128;
    for (float x = -30.0f; x <= 30.0f; x += 0.125f) {
      const int q = quantize_value(x, p);
      CHECK(q >= -128);
      CHECK(q <= 127);
      CHECK(q >= prev);
      prev = q;
    }
    CHECK(quantize_value(1e30f, p) == 127);
    CHECK(quantize_value(-1e30f, p) == -128);
  }
}

TEST_CASE("requantize examples") {
  CHECK(requantize(0, 1 << 30, 0, 0) == 0);
  // 0.5 decomposes exactly to (2^30, 0)
  CHECK(requantize(100, 1 << 30, 0, 0) == 50);
  auto [m, s] = decompose_multiplier(0.001);
  CHECK(requantize(1'000'000, m, s, 10) == 127);
}

TEST_CASE("requantize matches the float reference within one quantum") {
  Rng rng(13);
  for (int trial = 0; trial < 100'000; ++trial) {
    const int32_t acc = static_cast<int32_t>(rng.uniform_int(1 << 25)) - (1 << 24);
    const double real_mult = rng.uniform(1e-6, 1.0 - 1e-9);
    const int32_t zp = rng.uniform_int(256) - 128;
    auto [m, s] = decompose_multiplier(real_mult);
    const int fixed = requantize(acc, m, s, zp);
    const int ref = clamped_float_requant(acc, real_mult, zp);
    CHECK(std::abs(fixed - ref) <= 1);
  }
}

TEST_CASE("decompose_multiplier examples and reconstruction bound") {
  auto [m, s] = decompose_multiplier(0.5);
  CHECK(m == (1 << 30));
  CHECK(s == 0);

  auto [m2, s2] = decompose_multiplier(0.25);
  CHECK(m2 == (1 << 30));
  CHECK(s2 == 1);

  CHECK_THROWS_AS(decompose_multiplier(0.0), std::invalid_argument);
  CHECK_THROWS_AS(decompose_multiplier(1.0), std::invalid_argument);
  CHECK_THROWS_AS(decompose_multiplier(-0.5), std::invalid_argument);

  Rng rng(17);
  for (int trial = 0; trial < 10'000; ++trial) {
    const double real = rng.uniform(1e-9, 1.0 - 1e-12);
    auto [q, sh] = decompose_multiplier(real);
    CHECK(q >= (1 << 30));
    CHECK(sh >= 0);
    const double rebuilt = static_cast<double>(q) * std::ldexp(1.0, -31 - sh);
    CHECK(std::abs(rebuilt - real) <= std::ldexp(1.0, -31));
  }
}
