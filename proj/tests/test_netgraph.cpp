#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "microquant/netgraph.hpp"
#include "microquant/rng.hpp"
#include "microquant/trainer.hpp"

using namespace microquant;

namespace {

ModelSpec tiny_conv_model() {
  ModelSpec spec;
  spec.input_shape = {28, 28, 1};
  spec.layers = {
      Conv2DSpec{1, 32, 3, 1, Padding::kSame, Activation::kRelu},
      MaxPool2DSpec{2, 2},
      FlattenSpec{},
      DenseSpec{14 * 14 * 32, 24, Activation::kSoftmax},
  };
  return spec;
}

}  // namespace

TEST_CASE("infer_shapes") {
  ModelSpec spec;
  spec.input_shape = {28, 28, 1};
  spec.layers = {
      Conv2DSpec{1, 32, 3, 1, Padding::kSame, Activation::kRelu},
      MaxPool2DSpec{2, 2},
      Conv2DSpec{32, 64, 3, 1, Padding::kSame, Activation::kRelu},
      MaxPool2DSpec{2, 2},
      FlattenSpec{},
      DenseSpec{3136, 64, Activation::kRelu},
      DenseSpec{64, 24, Activation::kSoftmax},
  };
  const auto shapes = infer_shapes(spec);
  CHECK(shapes[0] == std::vector<int>{28, 28, 32});
  CHECK(shapes[1] == std::vector<int>{14, 14, 32});
  CHECK(shapes[2] == std::vector<int>{14, 14, 64});
  CHECK(shapes[3] == std::vector<int>{7, 7, 64});
  CHECK(shapes[4] == std::vector<int>{3136});
  CHECK(shapes[5] == std::vector<int>{64});
  CHECK(shapes[6] == std::vector<int>{24});
}

TEST_CASE("shape errors name the layer") {
  ModelSpec spec;
  spec.input_shape = {28, 28, 1};
  spec.layers = {FlattenSpec{}, DenseSpec{100, 10, Activation::kNone}};
  try {
    infer_shapes(spec);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }

  // softmax anywhere but the end is rejected
  spec.layers = {FlattenSpec{}, DenseSpec{784, 10, Activation::kSoftmax},
                 DenseSpec{10, 5, Activation::kNone}};
  CHECK_THROWS_AS(infer_shapes(spec), std::invalid_argument);
}

TEST_CASE("param_count") {
  ModelSpec empty;
  empty.input_shape = {28, 28, 1};
  CHECK(param_count(empty) == 0);

  ModelSpec conv;
  conv.input_shape = {28, 28, 1};
  conv.layers = {Conv2DSpec{1, 8, 3, 1, Padding::kSame, Activation::kNone}};
  CHECK(param_count(conv) == 80);

  ModelSpec dense;
  dense.input_shape = {1, 1, 10};
  dense.layers = {FlattenSpec{}, DenseSpec{10, 24, Activation::kNone}};
  CHECK(param_count(dense) == 264);
}

TEST_CASE("param_count equals stored weight elements") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ModelSpec spec;
    const int c1 = 1 + rng.uniform_int(8);
    const int c2 = 1 + rng.uniform_int(8);
    const int d = 1 + rng.uniform_int(32);
    spec.input_shape = {8, 8, 1};
    spec.layers = {
        Conv2DSpec{1, c1, 3, 1, Padding::kSame, Activation::kRelu},
        Conv2DSpec{c1, c2, 3, 1, Padding::kSame, Activation::kRelu},
        MaxPool2DSpec{2, 2},
        FlattenSpec{},
        DenseSpec{4 * 4 * c2, d, Activation::kRelu},
        DenseSpec{d, 5, Activation::kSoftmax},
    };
    init_weights(spec, static_cast<uint64_t>(trial));
    int64_t stored = 0;
    for (const LayerWeights& w : spec.weights) stored += w.kernel.numel() + w.bias.numel();
    CHECK(stored == param_count(spec));
  }
}

TEST_CASE("same-padding stride-1 conv preserves spatial dims") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 3 + rng.uniform_int(20), w = 3 + rng.uniform_int(20);
    const int k = 1 + rng.uniform_int(7);
    ModelSpec spec;
    spec.input_shape = {h, w, 1};
    spec.layers = {Conv2DSpec{1, 2, k, 1, Padding::kSame, Activation::kNone}};
    const auto shapes = infer_shapes(spec);
    CHECK(shapes[0] == std::vector<int>{h, w, 2});
  }
}

TEST_CASE("conv2d primitives") {
  // 3x3 input 1..9, all-ones 2x2 kernel, valid: hand-computed windows
  Tensor input({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor kernel({2, 2, 1, 1}, {1, 1, 1, 1});
  Tensor bias({1}, {0});
  const Tensor out = conv2d(input, kernel, bias, 1, Padding::kValid);
  CHECK(out.shape == std::vector<int>{2, 2, 1});
  CHECK(out.data == std::vector<float>{12, 16, 24, 28});

  // zero kernel + bias b = constant b
  const Tensor constant = conv2d(input, Tensor::zeros({2, 2, 1, 1}), Tensor({1}, {3.5f}),
                                 1, Padding::kValid);
  for (float v : constant.data) CHECK(v == 3.5f);

  // 1x1 kernel of 2 with bias 1 = affine map
  const Tensor affine =
      conv2d(input, Tensor({1, 1, 1, 1}, {2.0f}), Tensor({1}, {1.0f}), 1, Padding::kSame);
  for (size_t i = 0; i < input.data.size(); ++i)
    CHECK(affine.data[i] == 2.0f * input.data[i] + 1.0f);
}

TEST_CASE("relu, softmax, maxpool primitives") {
  const Tensor r = relu(Tensor({3}, {-3.0f, 0.0f, 3.0f}));
  CHECK(r.data == std::vector<float>{0, 0, 3});

  const Tensor sm = softmax(Tensor({24}, std::vector<float>(24, 1.7f)));
  for (float v : sm.data) CHECK(v == doctest::Approx(1.0f / 24.0f));

  const Tensor mp = maxpool2d(Tensor({2, 2, 1}, {1, 2, 3, 4}), 2, 2);
  CHECK(mp.data == std::vector<float>{4});
}

TEST_CASE("softmax invariants") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> logits(10);
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-8.0, 8.0));
    const Tensor p = softmax(Tensor({10}, logits));
    double sum = 0.0;
    for (float v : p.data) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    std::vector<float> shifted = logits;
    for (auto& v : shifted) v += 5.25f;
    const Tensor q = softmax(Tensor({10}, shifted));
    int arg_p = 0, arg_q = 0;
    for (int i = 1; i < 10; ++i) {
      if (p.data[static_cast<size_t>(i)] > p.data[static_cast<size_t>(arg_p)]) arg_p = i;
      if (q.data[static_cast<size_t>(i)] > q.data[static_cast<size_t>(arg_q)]) arg_q = i;
    }
    CHECK(arg_p == arg_q);
  }
}

TEST_CASE("forward identity and uniform cases") {
  ModelSpec ident;
  ident.input_shape = {4, 4, 1};
  ident.layers = {Conv2DSpec{1, 1, 1, 1, Padding::kSame, Activation::kNone}};
  ident.weights = {{Tensor({1, 1, 1, 1}, {1.0f}), Tensor({1}, {0.0f})}};
  Tensor x = Tensor::zeros({4, 4, 1});
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<float>(i) * 0.25f;
  CHECK(forward(ident, x).data == x.data);

  ModelSpec sm;
  sm.input_shape = {1, 1, 2};
  sm.layers = {FlattenSpec{}, DenseSpec{2, 2, Activation::kSoftmax}};
  sm.weights = {{}, {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})}};
  const Tensor p = forward(sm, Tensor({1, 1, 2}, {0.0f, 0.0f}));
  CHECK(p.data[0] == doctest::Approx(0.5f));
  CHECK(p.data[1] == doctest::Approx(0.5f));
}

TEST_CASE("batched forward equals per-sample forwards") {
  ModelSpec spec = tiny_conv_model();
  init_weights(spec, 99);
  Rng rng(11);
  Tensor batch = Tensor::zeros({3, 28, 28, 1});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());
  const Tensor batched = forward(spec, batch);
  for (int s = 0; s < 3; ++s) {
    Tensor sample({28, 28, 1},
                  std::vector<float>(batch.data.begin() + s * 784,
                                     batch.data.begin() + (s + 1) * 784));
    const Tensor single = forward(spec, sample);
    for (int c = 0; c < 24; ++c)
      CHECK(batched.data[static_cast<size_t>(s) * 24 + c] ==
            single.data[static_cast<size_t>(c)]);
  }
}

TEST_CASE("capture records input, activations, and final logits") {
  ModelSpec spec = tiny_conv_model();
  init_weights(spec, 1);
  Tensor x = Tensor::zeros({28, 28, 1});
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<float>(i % 17) / 16.0f;
  std::vector<Tensor> captured;
  const Tensor probs = forward(spec, x, &captured);
  REQUIRE(captured.size() == spec.layers.size() + 1);
  CHECK(captured[0].data == x.data);
  // relu output is nonnegative
  for (float v : captured[1].data) CHECK(v >= 0.0f);
  // final capture is pre-softmax: applying softmax reproduces the output
  const Tensor from_logits = softmax(captured.back());
  for (size_t i = 0; i < probs.data.size(); ++i)
    CHECK(probs.data[i] == doctest::Approx(from_logits.data[i]));
}
