#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "microquant/quantizer.hpp"
#include "microquant/rng.hpp"
#include "microquant/trainer.hpp"

using namespace microquant;

namespace {

ModelSpec conv_dense_model() {
  ModelSpec spec;
  spec.input_shape = {8, 8, 1};
  spec.layers = {
      Conv2DSpec{1, 4, 3, 1, Padding::kSame, Activation::kRelu},
      MaxPool2DSpec{2, 2},
      FlattenSpec{},
      DenseSpec{64, 24, Activation::kSoftmax},
  };
  return spec;
}

Tensor random_input(const ModelSpec& spec, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t = Tensor::zeros({spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

QuantTensor quantize_buffer(const Tensor& t, const QuantParams& p) {
  QuantTensor qt;
  qt.shape = t.shape;
  qt.params = p;
  qt.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) qt.data[i] = quantize_value(t.data[i], p);
  return qt;
}

}  // namespace

TEST_CASE("calibrate records unions of activation ranges") {
  ModelSpec spec = conv_dense_model();
  spec.weights.assign(spec.layers.size(), {});
  spec.weights[0] = {Tensor::zeros({3, 3, 1, 4}), Tensor::zeros({4})};
  spec.weights[3] = {Tensor::zeros({64, 24}), Tensor::zeros({24})};

  // all-zero model on an all-zero sample: every range collapses to (0,0)
  const CalibrationProfile zero = calibrate(spec, {Tensor::zeros({8, 8, 1})});
  CHECK(zero.input.min == 0.0f);
  CHECK(zero.input.max == 0.0f);
  for (const Range& r : zero.layer_outputs) {
    CHECK(r.min == 0.0f);
    CHECK(r.max == 0.0f);
  }

  init_weights(spec, 3);
  Rng rng(5);
  const Tensor a = random_input(spec, rng), b = random_input(spec, rng, -1.0, 0.5);
  const CalibrationProfile pa = calibrate(spec, {a});
  const CalibrationProfile pb = calibrate(spec, {b});
  const CalibrationProfile both = calibrate(spec, {a, b});
  CHECK(both.sample_count == 2);
  CHECK(both.input.min == std::min(pa.input.min, pb.input.min));
  CHECK(both.input.max == std::max(pa.input.max, pb.input.max));
  for (size_t i = 0; i < both.layer_outputs.size(); ++i) {
    CHECK(both.layer_outputs[i].min ==
          std::min(pa.layer_outputs[i].min, pb.layer_outputs[i].min));
    CHECK(both.layer_outputs[i].max ==
          std::max(pa.layer_outputs[i].max, pb.layer_outputs[i].max));
  }
  // relu layer output ranges are nonnegative
  CHECK(both.layer_outputs[0].min >= 0.0f);

  CHECK_THROWS_AS(calibrate(spec, {}), std::invalid_argument);
}

TEST_CASE("quantize_model basics") {
  ModelSpec spec = conv_dense_model();
  spec.weights.assign(spec.layers.size(), {});
  spec.weights[0] = {Tensor::zeros({3, 3, 1, 4}), Tensor::zeros({4})};
  spec.weights[3] = {Tensor::zeros({64, 24}), Tensor::zeros({24})};

  const CalibrationProfile profile = calibrate(spec, {Tensor::zeros({8, 8, 1})});
  const QuantizedModel qm = quantize_model(spec, profile);
  for (const QuantLayer& ql : qm.qlayers)
    for (int8_t q : ql.weights.data) CHECK(q == 0);

  // symmetric weight scale: max |w| / 127
  ModelSpec one;
  one.input_shape = {1, 1, 2};
  one.layers = {FlattenSpec{}, DenseSpec{2, 1, Activation::kNone}};
  one.weights = {{}, {Tensor({2, 1}, {0.254f, -0.1f}), Tensor({1}, {1.0f})}};
  const CalibrationProfile p1 = calibrate(one, {Tensor({1, 1, 2}, {0.0f, 1.0f})});
  const QuantizedModel q1 = quantize_model(one, p1);
  CHECK(q1.qlayers[1].weights.params.scale == doctest::Approx(0.254f / 127.0f));
  CHECK(q1.qlayers[1].weights.params.zero_point == 0);

  // bias lands at round(b / (s_in * s_w))
  const double s_in = q1.qlayers[1].in_params.scale;
  const double s_w = q1.qlayers[1].weights.params.scale;
  CHECK(q1.qlayers[1].bias[0] == static_cast<int32_t>(std::round(1.0 / (s_in * s_w))));
}

TEST_CASE("bias quantizes to round(b / (s_in * s_w)) with exact scales") {
  // s_in = 0.01 (range 0..2.55), s_w = 0.01 (max |w| = 1.27): bias 1.0 -> 10000
  ModelSpec spec;
  spec.input_shape = {1, 1, 2};
  spec.layers = {FlattenSpec{}, DenseSpec{2, 1, Activation::kNone}};
  spec.weights = {{}, {Tensor({2, 1}, {1.27f, -0.5f}), Tensor({1}, {1.0f})}};
  const CalibrationProfile p = calibrate(spec, {Tensor({1, 1, 2}, {0.0f, 2.55f})});
  const QuantizedModel qm = quantize_model(spec, p);
  CHECK(qm.input_params.scale == doctest::Approx(0.01f));
  CHECK(qm.qlayers[1].weights.params.scale == doctest::Approx(0.01f));
  CHECK(qm.qlayers[1].bias[0] == 10000);
}

TEST_CASE("identity-scale dense reproduces the input within one quantum") {
  // s_in = s_out and unit weight scale make the real multiplier 1, which the
  // Q31 path saturates just below; output tracks q_in within +-1
  QuantTensor x;
  x.shape = {1};
  x.params = {0.02f, 0};
  QuantTensor w;
  w.shape = {1, 1};
  w.params = {1.0f, 0};
  w.data = {1};
  for (int q = -128; q <= 127; ++q) {
    x.data = {static_cast<int8_t>(q)};
    const QuantTensor out = dense_int8(x, w, {0}, false, std::numeric_limits<int32_t>::max(),
                                       0, {0.02f, 0});
    CHECK(std::abs(static_cast<int>(out.data[0]) - q) <= 1);
  }
}

TEST_CASE("conv2d_int8 zero weights produce the output zero point") {
  QuantParams in_p{0.01f, -128};
  QuantTensor input;
  input.shape = {4, 4, 1};
  input.params = in_p;
  input.data.assign(16, 42);

  QuantTensor w;
  w.shape = {3, 3, 1, 2};
  w.params = {0.05f, 0};
  w.data.assign(18, 0);

  auto [mult, sh] = decompose_multiplier(0.25);
  const QuantTensor out = conv2d_int8(input, w, {0, 0}, 1, Padding::kSame, false, mult, sh,
                                      {0.02f, -7});
  for (int8_t v : out.data) CHECK(v == -7);
}

TEST_CASE("int8 layer outputs stay within 3 output quanta of the float path") {
  // linear layers only: a fused relu shrinks the calibrated range to the
  // positive tail, and the tighter quantum makes accumulated rounding noise
  // alone exceed the bound (relu is exercised by its own tests)
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const bool conv = trial % 2 == 0;
    ModelSpec spec;
    if (conv) {
      const int ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(4);
      const int k = 1 + rng.uniform_int(3);
      spec.input_shape = {8, 8, ci};
      spec.layers = {Conv2DSpec{ci, co, k, 1, trial % 4 == 0 ? Padding::kValid : Padding::kSame,
                                Activation::kNone}};
    } else {
      const int in = 4 + rng.uniform_int(28), out = 1 + rng.uniform_int(24);
      spec.input_shape = {1, 1, in};
      spec.layers = {FlattenSpec{}, DenseSpec{in, out, Activation::kNone}};
    }
    init_weights(spec, static_cast<uint64_t>(1000 + trial));
    // nonzero biases exercise the int32 bias path
    for (auto& lw : spec.weights)
      if (!lw.bias.empty())
        for (auto& b : lw.bias.data) b = static_cast<float>(rng.uniform(-0.2, 0.2));

    std::vector<Tensor> rep;
    for (int s = 0; s < 8; ++s) rep.push_back(random_input(spec, rng, -1.0, 1.0));
    const CalibrationProfile profile = calibrate(spec, rep);
    const QuantizedModel qm = quantize_model(spec, profile);

    const Tensor& x = rep[0];  // inside the calibrated range by construction
    const Tensor want = forward(spec, x);

    QuantTensor qx = quantize_buffer(x, qm.input_params);
    QuantTensor got;
    size_t li = conv ? 0 : 1;
    const QuantLayer& ql = qm.qlayers[li];
    if (conv) {
      const auto& c = std::get<Conv2DSpec>(spec.layers[0]);
      got = conv2d_int8(qx, ql.weights, ql.bias, c.stride, c.padding,
                        c.activation == Activation::kRelu, ql.multiplier, ql.shift,
                        ql.out_params);
    } else {
      qx.shape = {spec.input_shape[2]};
      const auto& d = std::get<DenseSpec>(spec.layers[1]);
      got = dense_int8(qx, ql.weights, ql.bias, d.activation == Activation::kRelu,
                       ql.multiplier, ql.shift, ql.out_params);
    }
    REQUIRE(got.numel() == want.numel());
    for (size_t i = 0; i < got.data.size(); ++i) {
      const float back = dequantize_value(got.data[i], got.params);
      CHECK(std::abs(back - want.data[i]) <= 3.0f * got.params.scale);
    }
  }
}

TEST_CASE("fused relu clamps at the output zero point") {
  Rng rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const int in = 4 + rng.uniform_int(12), out = 2 + rng.uniform_int(10);
    ModelSpec spec;
    spec.input_shape = {1, 1, in};
    spec.layers = {FlattenSpec{}, DenseSpec{in, out, Activation::kNone}};
    init_weights(spec, static_cast<uint64_t>(900 + trial));

    std::vector<Tensor> rep;
    for (int s = 0; s < 8; ++s) rep.push_back(random_input(spec, rng, -1.0, 1.0));
    const QuantizedModel qm = quantize_model(spec, calibrate(spec, rep));
    const QuantLayer& ql = qm.qlayers[1];

    QuantTensor qx = quantize_buffer(rep[0], qm.input_params);
    qx.shape = {in};
    const QuantTensor plain = dense_int8(qx, ql.weights, ql.bias, false, ql.multiplier,
                                         ql.shift, ql.out_params);
    const QuantTensor clamped = dense_int8(qx, ql.weights, ql.bias, true, ql.multiplier,
                                           ql.shift, ql.out_params);
    // the linear out range includes negatives, so zp_out represents real 0
    // and the fused relu is exactly an elementwise max against it
    for (size_t i = 0; i < plain.data.size(); ++i) {
      const int8_t want = std::max(plain.data[i],
                                   static_cast<int8_t>(ql.out_params.zero_point));
      CHECK(clamped.data[i] == want);
      CHECK(dequantize_value(clamped.data[i], ql.out_params) >= 0.0f);
    }
  }
}

TEST_CASE("maxpool_int8 commutes with float maxpool exactly") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    QuantParams p{static_cast<float>(rng.uniform(0.001, 0.1)),
                  rng.uniform_int(256) - 128};
    QuantTensor in;
    in.shape = {6, 6, 2};
    in.params = p;
    in.data.resize(72);
    for (auto& v : in.data) v = static_cast<int8_t>(rng.uniform_int(256) - 128);

    const QuantTensor got = maxpool_int8(in, 2, 2);

    Tensor fin = Tensor::zeros(in.shape);
    for (size_t i = 0; i < in.data.size(); ++i) fin.data[i] = dequantize_value(in.data[i], p);
    const Tensor fout = maxpool2d(fin, 2, 2);
    REQUIRE(got.numel() == fout.numel());
    for (size_t i = 0; i < got.data.size(); ++i)
      CHECK(got.data[i] == quantize_value(fout.data[i], p));
  }

  QuantTensor tiny;
  tiny.shape = {2, 2, 1};
  tiny.params = {1.0f, 0};
  tiny.data = {-5, 3, 0, 7};
  CHECK(maxpool_int8(tiny, 2, 2).data[0] == 7);
}

TEST_CASE("bias scale identity holds in generated models") {
  Rng rng(51);
  ModelSpec spec = conv_dense_model();
  init_weights(spec, 606);
  std::vector<Tensor> rep;
  for (int s = 0; s < 8; ++s) rep.push_back(random_input(spec, rng));
  const QuantizedModel qm = quantize_model(spec, calibrate(spec, rep));
  for (const QuantLayer& ql : qm.qlayers) {
    if (ql.weights.data.empty()) continue;
    // multiplier reconstructs (s_in * s_w) / s_out within Q31 resolution
    const double real = static_cast<double>(ql.in_params.scale) * ql.weights.params.scale /
                        ql.out_params.scale;
    const double rebuilt = static_cast<double>(ql.multiplier) * std::ldexp(1.0, -31 - ql.shift);
    CHECK(std::abs(rebuilt - real) <= std::ldexp(1.0, -31));
  }
}

TEST_CASE("quantized zero-weight model yields uniform probabilities") {
  ModelSpec spec = conv_dense_model();
  spec.weights.assign(spec.layers.size(), {});
  spec.weights[0] = {Tensor::zeros({3, 3, 1, 4}), Tensor::zeros({4})};
  spec.weights[3] = {Tensor::zeros({64, 24}), Tensor::zeros({24})};

  Rng rng(61);
  std::vector<Tensor> rep = {random_input(spec, rng)};
  const QuantizedModel qm = quantize_model(spec, calibrate(spec, rep));
  const Tensor probs = infer_quantized(qm, rep[0]);
  for (float v : probs.data) CHECK(v == doctest::Approx(1.0f / 24.0f));

  // determinism: bitwise identical on repeat
  const Tensor again = infer_quantized(qm, rep[0]);
  CHECK(probs.data == again.data);

  CHECK_THROWS_AS(infer_quantized(qm, Tensor::zeros({4, 4, 1})), std::invalid_argument);
}

TEST_CASE("end-to-end quantized model tracks the float model") {
  ModelSpec spec = conv_dense_model();
  init_weights(spec, 71);
  Rng rng(72);
  std::vector<Tensor> rep;
  for (int s = 0; s < 32; ++s) rep.push_back(random_input(spec, rng));
  const QuantizedModel qm = quantize_model(spec, calibrate(spec, rep));

  int agree = 0;
  for (int s = 0; s < 32; ++s) {
    const Tensor pf = forward(spec, rep[static_cast<size_t>(s)]);
    const Tensor pq = infer_quantized(qm, rep[static_cast<size_t>(s)]);
    int af = 0, aq = 0;
    for (int c = 1; c < 24; ++c) {
      if (pf.data[static_cast<size_t>(c)] > pf.data[static_cast<size_t>(af)]) af = c;
      if (pq.data[static_cast<size_t>(c)] > pq.data[static_cast<size_t>(aq)]) aq = c;
    }
    if (af == aq) ++agree;
  }
  CHECK(agree >= 30);  // untrained logits sit close together; near-total agreement still expected
}
