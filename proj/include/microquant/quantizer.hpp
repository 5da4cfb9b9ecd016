#pragma once

// Post-training full-integer quantization and the integer-only inference
// path. Weights quantize symmetric per tensor (zero_point 0); activations
// asymmetric per tensor from calibrated ranges; biases are int32 at
// input_scale * weight_scale; each conv/dense layer carries a Q31
// requantization multiplier for (s_in * s_w) / s_out. Model inputs and
// outputs stay float32: the input is quantized on entry, final logits are
// dequantized and passed through a float softmax.

#include <cstdint>
#include <vector>

#include "microquant/netgraph.hpp"
#include "microquant/tensor.hpp"

namespace microquant {

struct CalibrationProfile {
  Range input;
  std::vector<Range> layer_outputs;   // per layer, integer-pipeline domain
  std::vector<Range> weight_ranges;   // per layer kernel ({0,0} when none)
  std::vector<bool> has_weights;      // which layers carry a kernel
  int sample_count = 0;
};

// Runs every representative sample through the float model with activation
// capture and unions elementwise min/max per tensor. Weight ranges come from
// the weights themselves. Throws on an empty representative set.
CalibrationProfile calibrate(const ModelSpec& spec,
                             const std::vector<Tensor>& representative);

struct QuantLayer {
  QuantTensor weights;        // int8, symmetric (empty for pool/flatten)
  std::vector<int32_t> bias;  // scale = in_scale * weight_scale
  QuantParams in_params;
  QuantParams out_params;
  int32_t multiplier = 0;  // Q31 fixed-point for (s_in*s_w)/s_out
  int32_t shift = 0;
};

struct QuantizedModel {
  std::array<int, 3> input_shape{};
  std::vector<LayerSpec> layers;  // architecture mirror
  QuantParams input_params;
  std::vector<QuantLayer> qlayers;  // parallel to layers
};

QuantizedModel quantize_model(const ModelSpec& spec, const CalibrationProfile& profile);

// Integer conv: acc = sum (q_in - zp_in) * q_w + bias_i32 per output element,
// requantized to out_params; fused relu clamps at the output zero point.
QuantTensor conv2d_int8(const QuantTensor& input, const QuantTensor& weights,
                        const std::vector<int32_t>& bias, int stride, Padding padding,
                        bool fused_relu, int32_t multiplier, int32_t shift,
                        QuantParams out_params);

QuantTensor dense_int8(const QuantTensor& input, const QuantTensor& weights,
                       const std::vector<int32_t>& bias, bool fused_relu,
                       int32_t multiplier, int32_t shift, QuantParams out_params);

// Window max over raw int8 values; params pass through unchanged (max
// commutes with the monotone affine dequantization).
QuantTensor maxpool_int8(const QuantTensor& input, int pool, int stride);

// float32 input -> int8 pipeline -> float32 class probabilities.
Tensor infer_quantized(const QuantizedModel& qm, const Tensor& input);

// The integer core executes exactly these kernels between input quantization
// and final dequantization; the execution switch is checked against this
// list so no float operation can slip into the pipeline.
inline constexpr const char* kIntegerCoreOps[] = {"conv2d_int8", "dense_int8",
                                                  "maxpool_int8", "reshape_int8"};

}  // namespace microquant
