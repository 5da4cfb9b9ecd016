#include "microquant/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace microquant {

namespace {

[[noreturn]] void layer_error(size_t idx, const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(idx) + ": " + what);
}

// same-padding split: extra row/column goes to the bottom/right
void same_padding(int in, int k, int stride, int* before, int* after) {
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + k - in, 0);
  *before = total / 2;
  *after = total - *before;
}

}  // namespace

bool ModelSpec::has_weights() const {
  if (weights.size() != layers.size()) return false;
  for (size_t i = 0; i < layers.size(); ++i) {
    auto [ks, bs] = weight_shapes(layers[i]);
    if (!ks.empty() && weights[i].kernel.empty()) return false;
  }
  return true;
}

std::vector<std::vector<int>> infer_shapes(const ModelSpec& spec) {
  for (int d : spec.input_shape)
    if (d < 1) throw std::invalid_argument("input_shape dimensions must be >= 1");

  std::vector<std::vector<int>> out;
  std::vector<int> cur = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (auto* c = std::get_if<Conv2DSpec>(&layer)) {
      if (c->kernel < 1 || c->stride < 1 || c->in_channels < 1 || c->out_channels < 1)
        layer_error(i, "conv2d dimensions must be >= 1");
      if (c->activation == Activation::kSoftmax)
        layer_error(i, "softmax is only allowed on the final dense layer");
      if (cur.size() != 3) layer_error(i, "conv2d requires a [h,w,c] input");
      if (cur[2] != c->in_channels)
        layer_error(i, "conv2d in_channels " + std::to_string(c->in_channels) +
                           " != input channels " + std::to_string(cur[2]));
      int oh, ow;
      if (c->padding == Padding::kSame) {
        oh = (cur[0] + c->stride - 1) / c->stride;
        ow = (cur[1] + c->stride - 1) / c->stride;
      } else {
        if (cur[0] < c->kernel || cur[1] < c->kernel)
          layer_error(i, "valid conv2d kernel larger than input");
        oh = (cur[0] - c->kernel) / c->stride + 1;
        ow = (cur[1] - c->kernel) / c->stride + 1;
      }
      cur = {oh, ow, c->out_channels};
    } else if (auto* p = std::get_if<MaxPool2DSpec>(&layer)) {
      if (p->pool < 1 || p->stride < 1) layer_error(i, "maxpool dimensions must be >= 1");
      if (cur.size() != 3) layer_error(i, "maxpool2d requires a [h,w,c] input");
      if (cur[0] < p->pool || cur[1] < p->pool)
        layer_error(i, "maxpool window larger than input");
      cur = {(cur[0] - p->pool) / p->stride + 1, (cur[1] - p->pool) / p->stride + 1, cur[2]};
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      cur = {static_cast<int>(shape_numel(cur))};
    } else {
      const auto& d = std::get<DenseSpec>(layer);
      if (d.in_features < 1 || d.out_features < 1)
        layer_error(i, "dense dimensions must be >= 1");
      if (cur.size() != 1)
        layer_error(i, "dense requires a flat input (insert flatten)");
      if (cur[0] != d.in_features)
        layer_error(i, "dense in_features " + std::to_string(d.in_features) +
                           " != input size " + std::to_string(cur[0]));
      if (d.activation == Activation::kSoftmax && i + 1 != spec.layers.size())
        layer_error(i, "softmax is only allowed on the final dense layer");
      cur = {d.out_features};
    }
    out.push_back(cur);
  }
  return out;
}

int64_t param_count(const ModelSpec& spec) {
  int64_t n = 0;
  for (const LayerSpec& layer : spec.layers) {
    if (auto* c = std::get_if<Conv2DSpec>(&layer))
      n += static_cast<int64_t>(c->kernel) * c->kernel * c->in_channels * c->out_channels +
           c->out_channels;
    else if (auto* d = std::get_if<DenseSpec>(&layer))
      n += static_cast<int64_t>(d->in_features) * d->out_features + d->out_features;
  }
  return n;
}

std::pair<std::vector<int>, std::vector<int>> weight_shapes(const LayerSpec& layer) {
  if (auto* c = std::get_if<Conv2DSpec>(&layer))
    return {{c->kernel, c->kernel, c->in_channels, c->out_channels}, {c->out_channels}};
  if (auto* d = std::get_if<DenseSpec>(&layer))
    return {{d->in_features, d->out_features}, {d->out_features}};
  return {{}, {}};
}

void validate_model(const ModelSpec& spec) {
  infer_shapes(spec);
  if (spec.weights.empty()) return;
  if (spec.weights.size() != spec.layers.size())
    throw std::invalid_argument("weights list length does not match layer count");
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    auto [ks, bs] = weight_shapes(spec.layers[i]);
    const LayerWeights& w = spec.weights[i];
    if (ks.empty()) {
      if (!w.kernel.empty() || !w.bias.empty())
        layer_error(i, "unexpected weights on a parameterless layer");
      continue;
    }
    if (w.kernel.shape != ks) layer_error(i, "kernel tensor shape mismatch");
    if (w.bias.shape != bs) layer_error(i, "bias tensor shape mismatch");
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: input must be [h,w,c], kernel [k,k,ci,co]");
  const int h = input.shape[0], w = input.shape[1], ci = input.shape[2];
  const int k = kernel.shape[0], co = kernel.shape[3];
  if (kernel.shape[1] != k || kernel.shape[2] != ci)
    throw std::invalid_argument("conv2d: kernel/input channel mismatch");
  if (bias.numel() != co) throw std::invalid_argument("conv2d: bias size mismatch");

  int pt = 0, pl = 0, oh, ow;
  if (padding == Padding::kSame) {
    int pb, pr;
    same_padding(h, k, stride, &pt, &pb);
    same_padding(w, k, stride, &pl, &pr);
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
  } else {
    oh = (h - k) / stride + 1;
    ow = (w - k) / stride + 1;
  }

  Tensor out = Tensor::zeros({oh, ow, co});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      float* acc = &out.data[(static_cast<size_t>(oy) * ow + ox) * co];
      for (int c = 0; c < co; ++c) acc[c] = bias.data[static_cast<size_t>(c)];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pt;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pl;
          if (ix < 0 || ix >= w) continue;
          const float* in_px = &input.data[(static_cast<size_t>(iy) * w + ix) * ci];
          const float* w_px = &kernel.data[((static_cast<size_t>(ky) * k + kx) * ci) * co];
          for (int c = 0; c < ci; ++c) {
            const float xv = in_px[c];
            const float* w_row = w_px + static_cast<size_t>(c) * co;
            for (int o = 0; o < co; ++o) acc[o] += xv * w_row[o];
          }
        }
      }
    }
  return out;
}

Tensor maxpool2d(const Tensor& input, int pool, int stride) {
  if (input.rank() != 3) throw std::invalid_argument("maxpool2d: input must be [h,w,c]");
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const int oh = (h - pool) / stride + 1, ow = (w - pool) / stride + 1;
  Tensor out = Tensor::zeros({oh, ow, c});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < c; ++ch) {
        float m = -std::numeric_limits<float>::infinity();
        for (int py = 0; py < pool; ++py)
          for (int px = 0; px < pool; ++px) {
            const float v =
                input.data[(static_cast<size_t>(oy * stride + py) * w + (ox * stride + px)) * c + ch];
            m = std::max(m, v);
          }
        out.data[(static_cast<size_t>(oy) * ow + ox) * c + ch] = m;
      }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data) v = std::max(0.0f, v);
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const int m = logits.shape.back();
  const int64_t rows = logits.numel() / m;
  for (int64_t r = 0; r < rows; ++r) {
    float* row = &out.data[static_cast<size_t>(r) * m];
    float mx = row[0];
    for (int i = 1; i < m; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int i = 0; i < m; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    for (int i = 0; i < m; ++i)
      row[i] = static_cast<float>(std::exp(static_cast<double>(row[i]) - mx) / sum);
  }
  return out;
}

namespace {

Tensor forward_sample(const ModelSpec& spec, Tensor x, std::vector<Tensor>* capture) {
  if (capture) capture->push_back(x);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (auto* c = std::get_if<Conv2DSpec>(&layer)) {
      x = conv2d(x, spec.weights[i].kernel, spec.weights[i].bias, c->stride, c->padding);
      if (c->activation == Activation::kRelu) x = relu(x);
      if (capture) capture->push_back(x);
    } else if (auto* p = std::get_if<MaxPool2DSpec>(&layer)) {
      x = maxpool2d(x, p->pool, p->stride);
      if (capture) capture->push_back(x);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      const int flat = static_cast<int>(x.numel());
      x = Tensor({flat}, std::move(x.data));
      if (capture) capture->push_back(x);
    } else {
      const auto& d = std::get<DenseSpec>(layer);
      const Tensor& kern = spec.weights[i].kernel;
      const Tensor& bias = spec.weights[i].bias;
      if (x.numel() != d.in_features)
        layer_error(i, "dense input size mismatch at execution");
      Tensor y = Tensor::zeros({d.out_features});
      for (int j = 0; j < d.out_features; ++j) y.data[static_cast<size_t>(j)] = bias.data[static_cast<size_t>(j)];
      for (int in = 0; in < d.in_features; ++in) {
        const float xv = x.data[static_cast<size_t>(in)];
        const float* w_row = &kern.data[static_cast<size_t>(in) * d.out_features];
        for (int j = 0; j < d.out_features; ++j) y.data[static_cast<size_t>(j)] += xv * w_row[j];
      }
      x = std::move(y);
      if (d.activation == Activation::kRelu) x = relu(x);
      if (capture) capture->push_back(x);  // softmax layers record logits
      if (d.activation == Activation::kSoftmax) x = softmax(x);
    }
  }
  return x;
}

}  // namespace

Tensor forward(const ModelSpec& spec, const Tensor& input, std::vector<Tensor>* capture) {
  validate_model(spec);
  if (!spec.has_weights())
    throw std::invalid_argument("forward: model has no weights attached");

  const std::vector<int> sample_shape = {spec.input_shape[0], spec.input_shape[1],
                                         spec.input_shape[2]};
  if (input.shape == sample_shape) return forward_sample(spec, input, capture);

  // batched [n, h, w, c]
  if (input.rank() == 4 && input.shape[1] == sample_shape[0] &&
      input.shape[2] == sample_shape[1] && input.shape[3] == sample_shape[2]) {
    if (capture) throw std::invalid_argument("forward: capture requires a single sample");
    const int n = input.shape[0];
    const int64_t stride = input.numel() / n;
    Tensor out;
    for (int s = 0; s < n; ++s) {
      Tensor sample(sample_shape,
                    std::vector<float>(input.data.begin() + s * stride,
                                       input.data.begin() + (s + 1) * stride));
      Tensor y = forward_sample(spec, std::move(sample), nullptr);
      if (s == 0) {
        std::vector<int> out_shape = {n};
        for (int d : y.shape) out_shape.push_back(d);
        out = Tensor::zeros(out_shape);
      }
      std::copy(y.data.begin(), y.data.end(), out.data.begin() + s * y.numel());
    }
    return out;
  }
  throw std::invalid_argument("forward: input shape does not match model input");
}

}  // namespace microquant
