#include "microquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>

namespace microquant {

CalibrationProfile calibrate(const ModelSpec& spec,
                             const std::vector<Tensor>& representative) {
  if (representative.empty())
    throw std::invalid_argument("calibrate: empty representative set");
  validate_model(spec);

  CalibrationProfile profile;
  profile.layer_outputs.resize(spec.layers.size());
  profile.weight_ranges.resize(spec.layers.size());
  profile.has_weights.resize(spec.layers.size(), false);
  profile.sample_count = static_cast<int>(representative.size());

  bool first = true;
  for (const Tensor& sample : representative) {
    std::vector<Tensor> captured;
    forward(spec, sample, &captured);  // [input, per-layer outputs]
    const Range in_r = range_of(captured[0].data.data(), captured[0].numel());
    if (first)
      profile.input = in_r;
    else
      profile.input.merge(in_r);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      const Tensor& act = captured[i + 1];
      const Range r = range_of(act.data.data(), act.numel());
      if (first)
        profile.layer_outputs[i] = r;
      else
        profile.layer_outputs[i].merge(r);
    }
    first = false;
  }

  for (size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.weights[i].kernel.empty()) continue;
    profile.has_weights[i] = true;
    profile.weight_ranges[i] =
        range_of(spec.weights[i].kernel.data.data(), spec.weights[i].kernel.numel());
  }
  return profile;
}

namespace {

void check_finite(const Range& r, const std::string& what) {
  if (!std::isfinite(r.min) || !std::isfinite(r.max))
    throw std::invalid_argument("quantize_model: non-finite range for " + what);
}

QuantTensor quantize_tensor(const Tensor& t, const QuantParams& p) {
  QuantTensor qt;
  qt.shape = t.shape;
  qt.params = p;
  qt.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) qt.data[i] = quantize_value(t.data[i], p);
  return qt;
}

}  // namespace

QuantizedModel quantize_model(const ModelSpec& spec, const CalibrationProfile& profile) {
  validate_model(spec);
  if (profile.layer_outputs.size() != spec.layers.size())
    throw std::invalid_argument("quantize_model: profile does not cover every layer");
  check_finite(profile.input, "input");

  QuantizedModel qm;
  qm.input_shape = spec.input_shape;
  qm.layers = spec.layers;
  qm.input_params = params_from_range(profile.input, /*symmetric=*/false);
  qm.qlayers.resize(spec.layers.size());

  QuantParams act = qm.input_params;  // params of the tensor entering each layer
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    QuantLayer& ql = qm.qlayers[i];
    ql.in_params = act;
    const bool trainable = std::holds_alternative<Conv2DSpec>(spec.layers[i]) ||
                           std::holds_alternative<DenseSpec>(spec.layers[i]);
    if (!trainable) {
      ql.out_params = act;  // pool/flatten pass through
      continue;
    }

    check_finite(profile.layer_outputs[i], "layer " + std::to_string(i) + " output");
    check_finite(profile.weight_ranges[i], "layer " + std::to_string(i) + " weights");
    if (!profile.has_weights[i])
      throw std::invalid_argument("quantize_model: missing weight range for layer " +
                                  std::to_string(i));

    const QuantParams w_params =
        params_from_range(profile.weight_ranges[i], /*symmetric=*/true);
    ql.weights = quantize_tensor(spec.weights[i].kernel, w_params);
    ql.out_params = params_from_range(profile.layer_outputs[i], /*symmetric=*/false);

    // int32 bias at s_in * s_w, saturating
    const double bias_scale = static_cast<double>(act.scale) * w_params.scale;
    ql.bias.resize(spec.weights[i].bias.data.size());
    for (size_t b = 0; b < ql.bias.size(); ++b) {
      const double q = std::round(spec.weights[i].bias.data[b] / bias_scale);
      double clamped = q;
      if (clamped > std::numeric_limits<int32_t>::max())
        clamped = std::numeric_limits<int32_t>::max();
      if (clamped < std::numeric_limits<int32_t>::min())
        clamped = std::numeric_limits<int32_t>::min();
      if (clamped != q)
        std::cerr << "microquant: warning: layer " << i << " bias " << b
                  << " saturated during int32 conversion\n";
      ql.bias[b] = static_cast<int32_t>(clamped);
    }

    double real_mult = bias_scale / ql.out_params.scale;
    if (real_mult >= 1.0) {
      // output scale coarser than one accumulator quantum; saturate just
      // below one so the Q31 contract holds
      std::cerr << "microquant: warning: layer " << i << " requant multiplier "
                << real_mult << " clamped to <1\n";
      ql.multiplier = std::numeric_limits<int32_t>::max();
      ql.shift = 0;
    } else {
      auto [q31, sh] = decompose_multiplier(real_mult);
      ql.multiplier = q31;
      ql.shift = sh;
    }
    act = ql.out_params;
  }
  return qm;
}

QuantTensor conv2d_int8(const QuantTensor& input, const QuantTensor& weights,
                        const std::vector<int32_t>& bias, int stride, Padding padding,
                        bool fused_relu, int32_t multiplier, int32_t shift,
                        QuantParams out_params) {
  const int h = input.shape[0], w = input.shape[1], ci = input.shape[2];
  const int k = weights.shape[0], co = weights.shape[3];
  const int32_t zp_in = input.params.zero_point;
  const int8_t zp_out = static_cast<int8_t>(out_params.zero_point);

  int pt = 0, pl = 0, oh, ow;
  if (padding == Padding::kSame) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    pt = std::max((oh - 1) * stride + k - h, 0) / 2;
    pl = std::max((ow - 1) * stride + k - w, 0) / 2;
  } else {
    oh = (h - k) / stride + 1;
    ow = (w - k) / stride + 1;
  }

  QuantTensor out;
  out.shape = {oh, ow, co};
  out.params = out_params;
  out.data.resize(static_cast<size_t>(oh) * ow * co);

  std::vector<int32_t> acc(static_cast<size_t>(co));
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      for (int o = 0; o < co; ++o) acc[static_cast<size_t>(o)] = bias[static_cast<size_t>(o)];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pt;
        if (iy < 0 || iy >= h) continue;  // padding contributes zero
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pl;
          if (ix < 0 || ix >= w) continue;
          const int8_t* in_px = &input.data[(static_cast<size_t>(iy) * w + ix) * ci];
          const int8_t* w_px = &weights.data[(static_cast<size_t>(ky) * k + kx) * ci * co];
          for (int cc = 0; cc < ci; ++cc) {
            const int32_t xv = static_cast<int32_t>(in_px[cc]) - zp_in;
            const int8_t* w_row = w_px + static_cast<size_t>(cc) * co;
            for (int o = 0; o < co; ++o)
              acc[static_cast<size_t>(o)] += xv * static_cast<int32_t>(w_row[o]);
          }
        }
      }
      int8_t* out_px = &out.data[(static_cast<size_t>(oy) * ow + ox) * co];
      for (int o = 0; o < co; ++o) {
        int8_t v = requantize(acc[static_cast<size_t>(o)], multiplier, shift,
                              out_params.zero_point);
        if (fused_relu && v < zp_out) v = zp_out;
        out_px[o] = v;
      }
    }
  return out;
}

QuantTensor dense_int8(const QuantTensor& input, const QuantTensor& weights,
                       const std::vector<int32_t>& bias, bool fused_relu,
                       int32_t multiplier, int32_t shift, QuantParams out_params) {
  const int in_features = weights.shape[0], out_features = weights.shape[1];
  if (input.numel() != in_features)
    throw std::invalid_argument("dense_int8: input size mismatch");
  const int32_t zp_in = input.params.zero_point;
  const int8_t zp_out = static_cast<int8_t>(out_params.zero_point);

  QuantTensor out;
  out.shape = {out_features};
  out.params = out_params;
  out.data.resize(static_cast<size_t>(out_features));

  std::vector<int32_t> acc(bias.begin(), bias.end());
  for (int i = 0; i < in_features; ++i) {
    const int32_t xv = static_cast<int32_t>(input.data[static_cast<size_t>(i)]) - zp_in;
    const int8_t* w_row = &weights.data[static_cast<size_t>(i) * out_features];
    for (int j = 0; j < out_features; ++j)
      acc[static_cast<size_t>(j)] += xv * static_cast<int32_t>(w_row[j]);
  }
  for (int j = 0; j < out_features; ++j) {
    int8_t v = requantize(acc[static_cast<size_t>(j)], multiplier, shift,
                          out_params.zero_point);
    if (fused_relu && v < zp_out) v = zp_out;
    out.data[static_cast<size_t>(j)] = v;
  }
  return out;
}

QuantTensor maxpool_int8(const QuantTensor& input, int pool, int stride) {
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const int oh = (h - pool) / stride + 1, ow = (w - pool) / stride + 1;
  QuantTensor out;
  out.shape = {oh, ow, c};
  out.params = input.params;
  out.data.resize(static_cast<size_t>(oh) * ow * c);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < c; ++ch) {
        int8_t m = std::numeric_limits<int8_t>::min();
        for (int py = 0; py < pool; ++py)
          for (int px = 0; px < pool; ++px) {
            const int8_t v =
                input.data[(static_cast<size_t>(oy * stride + py) * w + (ox * stride + px)) * c + ch];
            m = std::max(m, v);
          }
        out.data[(static_cast<size_t>(oy) * ow + ox) * c + ch] = m;
      }
  return out;
}

Tensor infer_quantized(const QuantizedModel& qm, const Tensor& input) {
  const std::vector<int> sample_shape = {qm.input_shape[0], qm.input_shape[1],
                                         qm.input_shape[2]};
  if (input.shape != sample_shape)
    throw std::invalid_argument("infer_quantized: input shape mismatch");

  // float -> int8 at the boundary
  QuantTensor x;
  x.shape = input.shape;
  x.params = qm.input_params;
  x.data.resize(input.data.size());
  for (size_t i = 0; i < input.data.size(); ++i)
    x.data[i] = quantize_value(input.data[i], qm.input_params);

  static_assert(sizeof(kIntegerCoreOps) / sizeof(kIntegerCoreOps[0]) == 4,
                "integer-core audit list must cover all four layer kinds");

  for (size_t i = 0; i < qm.layers.size(); ++i) {
    const QuantLayer& ql = qm.qlayers[i];
    if (auto* c = std::get_if<Conv2DSpec>(&qm.layers[i])) {
      x = conv2d_int8(x, ql.weights, ql.bias, c->stride, c->padding,
                      c->activation == Activation::kRelu, ql.multiplier, ql.shift,
                      ql.out_params);
    } else if (auto* p = std::get_if<MaxPool2DSpec>(&qm.layers[i])) {
      x = maxpool_int8(x, p->pool, p->stride);
    } else if (std::holds_alternative<FlattenSpec>(qm.layers[i])) {
      x.shape = {static_cast<int>(x.numel())};  // reshape_int8
    } else {
      const auto& d = std::get<DenseSpec>(qm.layers[i]);
      x = dense_int8(x, ql.weights, ql.bias, d.activation == Activation::kRelu,
                     ql.multiplier, ql.shift, ql.out_params);
    }
  }

  // int8 logits -> float, softmax in float when the model ends with one
  Tensor logits = Tensor::zeros(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    logits.data[i] = dequantize_value(x.data[i], x.params);
  if (!qm.layers.empty()) {
    if (auto* d = std::get_if<DenseSpec>(&qm.layers.back());
        d && d->activation == Activation::kSoftmax)
      return softmax(logits);
  }
  return logits;
}

}  // namespace microquant
