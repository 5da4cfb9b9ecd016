#pragma once

// Layer vocabulary, shape/parameter accounting, and float32 forward
// execution for the small-CNN stacks this toolkit trains and quantizes.
//
// Activations are [h, w, c] row-major (a leading batch dimension is accepted
// by forward). Conv kernels are [k, k, in_c, out_c]; dense kernels [in, out].
// Convolution is cross-correlation; same-padding puts the extra row/column at
// the bottom/right.

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

#include "microquant/tensor.hpp"

namespace microquant {

enum class Activation { kNone, kRelu, kSoftmax };
enum class Padding { kSame, kValid };

struct Conv2DSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  Padding padding = Padding::kSame;
  Activation activation = Activation::kNone;
  bool operator==(const Conv2DSpec&) const = default;
};

struct MaxPool2DSpec {
  int pool = 2;
  int stride = 2;
  bool operator==(const MaxPool2DSpec&) const = default;
};

struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};

struct DenseSpec {
  int in_features = 1;
  int out_features = 1;
  Activation activation = Activation::kNone;
  bool operator==(const DenseSpec&) const = default;
};

using LayerSpec = std::variant<Conv2DSpec, MaxPool2DSpec, FlattenSpec, DenseSpec>;

struct LayerWeights {
  Tensor kernel;  // empty for layers without parameters
  Tensor bias;
};

struct ModelSpec {
  std::array<int, 3> input_shape{};  // h, w, c
  std::vector<LayerSpec> layers;
  std::vector<LayerWeights> weights;  // parallel to layers

  bool has_weights() const;
};

// Output shape of every layer in order; throws (naming the layer index) on
// incompatible stacks, softmax anywhere but the final dense, or bad fields.
std::vector<std::vector<int>> infer_shapes(const ModelSpec& spec);

int64_t param_count(const ModelSpec& spec);

// Expected kernel/bias shapes per layer ({} for parameterless layers).
std::pair<std::vector<int>, std::vector<int>> weight_shapes(const LayerSpec& layer);

// Checks layer stack and, when present, weight tensor shapes.
void validate_model(const ModelSpec& spec);

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding);
Tensor maxpool2d(const Tensor& input, int pool, int stride);
Tensor relu(const Tensor& input);
Tensor softmax(const Tensor& logits);  // over the last dimension

// Runs the stack on one sample [h,w,c] or a batch [n,h,w,c] and returns the
// final activation. With `capture` non-null (single sample only) it records
// the tensors the integer pipeline would see: the input, then each layer's
// output post-relu -- except the final softmax layer, which records its
// pre-softmax logits (softmax runs in float outside the integer path).
Tensor forward(const ModelSpec& spec, const Tensor& input,
               std::vector<Tensor>* capture = nullptr);

}  // namespace microquant
