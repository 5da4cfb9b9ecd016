#include "microquant/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "microquant/model_io.hpp"
#include "microquant/rng.hpp"

namespace microquant {

AdamState make_adam_state(const ModelSpec& spec) {
  AdamState st;
  st.m.resize(spec.weights.size());
  st.v.resize(spec.weights.size());
  for (size_t i = 0; i < spec.weights.size(); ++i) {
    if (spec.weights[i].kernel.empty()) continue;
    st.m[i].kernel = Tensor::zeros(spec.weights[i].kernel.shape);
    st.m[i].bias = Tensor::zeros(spec.weights[i].bias.shape);
    st.v[i].kernel = Tensor::zeros(spec.weights[i].kernel.shape);
    st.v[i].bias = Tensor::zeros(spec.weights[i].bias.shape);
  }
  return st;
}

double cross_entropy_loss(const Tensor& probs, const Tensor& labels) {
  if (probs.shape != labels.shape)
    throw std::invalid_argument("cross_entropy_loss: probs/labels shape mismatch");
  const int m = probs.shape.back();
  const int64_t rows = probs.numel() / m;
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const float* p = &probs.data[static_cast<size_t>(r) * m];
    const float* y = &labels.data[static_cast<size_t>(r) * m];
    double prob_sum = 0.0;
    int ones = 0;
    double row_loss = 0.0;
    for (int c = 0; c < m; ++c) {
      prob_sum += p[c];
      if (y[c] == 1.0f) {
        ++ones;
        row_loss -= std::log(std::max(static_cast<double>(p[c]), 1e-12));
      } else if (y[c] != 0.0f) {
        throw std::invalid_argument("cross_entropy_loss: labels must be one-hot");
      }
    }
    if (ones != 1) throw std::invalid_argument("cross_entropy_loss: labels must be one-hot");
    if (std::abs(prob_sum - 1.0) > 1e-4)
      throw std::invalid_argument("cross_entropy_loss: probability row does not sum to 1");
    total += row_loss;
  }
  return total / static_cast<double>(rows);
}

namespace {

struct LayerCache {
  Tensor input;                // tensor entering the layer
  Tensor preact;               // conv/dense output before activation
  std::vector<int64_t> pool_src;  // flat source index per pooled element
};

// Forward one sample keeping what backward needs. Returns softmax probs.
Tensor forward_cached(const ModelSpec& spec, Tensor x, std::vector<LayerCache>& caches) {
  caches.resize(spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    caches[i].input = x;
    if (auto* c = std::get_if<Conv2DSpec>(&layer)) {
      x = conv2d(x, spec.weights[i].kernel, spec.weights[i].bias, c->stride, c->padding);
      caches[i].preact = x;
      if (c->activation == Activation::kRelu) x = relu(x);
    } else if (auto* p = std::get_if<MaxPool2DSpec>(&layer)) {
      const Tensor& in = caches[i].input;
      const int h = in.shape[0], w = in.shape[1], ch = in.shape[2];
      const int oh = (h - p->pool) / p->stride + 1, ow = (w - p->pool) / p->stride + 1;
      Tensor out = Tensor::zeros({oh, ow, ch});
      caches[i].pool_src.assign(out.data.size(), 0);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int cc = 0; cc < ch; ++cc) {
            float best = -std::numeric_limits<float>::infinity();
            int64_t best_idx = 0;
            for (int py = 0; py < p->pool; ++py)
              for (int px = 0; px < p->pool; ++px) {
                const int64_t idx =
                    (static_cast<int64_t>(oy * p->stride + py) * w + (ox * p->stride + px)) * ch + cc;
                if (in.data[static_cast<size_t>(idx)] > best) {  // first max wins ties
                  best = in.data[static_cast<size_t>(idx)];
                  best_idx = idx;
                }
              }
            const int64_t out_idx = (static_cast<int64_t>(oy) * ow + ox) * ch + cc;
            out.data[static_cast<size_t>(out_idx)] = best;
            caches[i].pool_src[static_cast<size_t>(out_idx)] = best_idx;
          }
      x = std::move(out);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      const int flat = static_cast<int>(x.numel());
      x = Tensor({flat}, std::move(x.data));
    } else {
      const auto& d = std::get<DenseSpec>(layer);
      const Tensor& kern = spec.weights[i].kernel;
      const Tensor& bias = spec.weights[i].bias;
      Tensor y({d.out_features}, std::vector<float>(bias.data.begin(), bias.data.end()));
      for (int in = 0; in < d.in_features; ++in) {
        const float xv = x.data[static_cast<size_t>(in)];
        const float* w_row = &kern.data[static_cast<size_t>(in) * d.out_features];
        for (int j = 0; j < d.out_features; ++j) y.data[static_cast<size_t>(j)] += xv * w_row[j];
      }
      caches[i].preact = y;
      if (d.activation == Activation::kRelu)
        x = relu(y);
      else if (d.activation == Activation::kSoftmax)
        x = softmax(y);
      else
        x = std::move(y);
    }
  }
  return x;
}

void relu_mask(Tensor& grad, const Tensor& preact) {
  for (size_t i = 0; i < grad.data.size(); ++i)
    if (preact.data[i] <= 0.0f) grad.data[i] = 0.0f;
}

}  // namespace

std::vector<LayerWeights> backward(const ModelSpec& spec, const Tensor& batch,
                                   const Tensor& labels) {
  validate_model(spec);
  if (spec.layers.empty()) throw std::invalid_argument("backward: empty model");
  const auto* last = std::get_if<DenseSpec>(&spec.layers.back());
  if (!last || last->activation != Activation::kSoftmax)
    throw std::invalid_argument("backward: final layer must be a softmax dense");

  const std::vector<int> sample_shape = {spec.input_shape[0], spec.input_shape[1],
                                         spec.input_shape[2]};
  int n;
  int64_t sample_elems = shape_numel(sample_shape);
  if (batch.shape == sample_shape) {
    n = 1;
  } else if (batch.rank() == 4 && batch.shape[1] == sample_shape[0] &&
             batch.shape[2] == sample_shape[1] && batch.shape[3] == sample_shape[2]) {
    n = batch.shape[0];
  } else {
    throw std::invalid_argument("backward: batch shape does not match model input");
  }
  const int m = last->out_features;
  if (labels.numel() != static_cast<int64_t>(n) * m)
    throw std::invalid_argument("backward: labels shape mismatch");

  std::vector<LayerWeights> grads(spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.weights[i].kernel.empty()) continue;
    grads[i].kernel = Tensor::zeros(spec.weights[i].kernel.shape);
    grads[i].bias = Tensor::zeros(spec.weights[i].bias.shape);
  }

  std::vector<LayerCache> caches;
  for (int s = 0; s < n; ++s) {
    Tensor x(sample_shape,
             std::vector<float>(batch.data.begin() + s * sample_elems,
                                batch.data.begin() + (s + 1) * sample_elems));
    Tensor probs = forward_cached(spec, std::move(x), caches);

    // fused softmax + cross-entropy: d(loss)/d(logits) = (p - y) / n
    Tensor grad = probs;
    for (int c = 0; c < m; ++c)
      grad.data[static_cast<size_t>(c)] =
          (grad.data[static_cast<size_t>(c)] - labels.data[static_cast<size_t>(s) * m + c]) /
          static_cast<float>(n);

    for (size_t li = spec.layers.size(); li-- > 0;) {
      const LayerSpec& layer = spec.layers[li];
      const LayerCache& cache = caches[li];
      if (auto* d = std::get_if<DenseSpec>(&layer)) {
        if (d->activation == Activation::kRelu) relu_mask(grad, cache.preact);
        // (softmax handled by the fused gradient above)
        const Tensor& kern = spec.weights[li].kernel;
        Tensor dx = Tensor::zeros({d->in_features});
        for (int in = 0; in < d->in_features; ++in) {
          const float xv = cache.input.data[static_cast<size_t>(in)];
          const float* w_row = &kern.data[static_cast<size_t>(in) * d->out_features];
          float* gk_row = &grads[li].kernel.data[static_cast<size_t>(in) * d->out_features];
          float acc = 0.0f;
          for (int j = 0; j < d->out_features; ++j) {
            const float g = grad.data[static_cast<size_t>(j)];
            gk_row[j] += xv * g;
            acc += w_row[j] * g;
          }
          dx.data[static_cast<size_t>(in)] = acc;
        }
        for (int j = 0; j < d->out_features; ++j)
          grads[li].bias.data[static_cast<size_t>(j)] += grad.data[static_cast<size_t>(j)];
        grad = std::move(dx);
      } else if (std::holds_alternative<FlattenSpec>(layer)) {
        grad = Tensor(cache.input.shape, std::move(grad.data));
      } else if (auto* p = std::get_if<MaxPool2DSpec>(&layer)) {
        Tensor dx = Tensor::zeros(cache.input.shape);
        for (size_t oi = 0; oi < grad.data.size(); ++oi)
          dx.data[static_cast<size_t>(cache.pool_src[oi])] += grad.data[oi];
        (void)p;
        grad = std::move(dx);
      } else {
        const auto& c = std::get<Conv2DSpec>(layer);
        if (c.activation == Activation::kRelu) relu_mask(grad, cache.preact);
        const Tensor& in = cache.input;
        const Tensor& kern = spec.weights[li].kernel;
        const int h = in.shape[0], w = in.shape[1], ci = in.shape[2];
        const int k = c.kernel, co = c.out_channels;
        const int oh = grad.shape[0], ow = grad.shape[1];
        int pt = 0, pl = 0;
        if (c.padding == Padding::kSame) {
          const int total_h = std::max((oh - 1) * c.stride + k - h, 0);
          const int total_w = std::max((ow - 1) * c.stride + k - w, 0);
          pt = total_h / 2;
          pl = total_w / 2;
        }
        Tensor dx = Tensor::zeros(in.shape);
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const float* g_px = &grad.data[(static_cast<size_t>(oy) * ow + ox) * co];
            for (int o = 0; o < co; ++o)
              grads[li].bias.data[static_cast<size_t>(o)] += g_px[o];
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * c.stride + ky - pt;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * c.stride + kx - pl;
                if (ix < 0 || ix >= w) continue;
                const float* in_px = &in.data[(static_cast<size_t>(iy) * w + ix) * ci];
                float* dx_px = &dx.data[(static_cast<size_t>(iy) * w + ix) * ci];
                const size_t w_base = (static_cast<size_t>(ky) * k + kx) * ci;
                for (int cc = 0; cc < ci; ++cc) {
                  const float* w_row = &kern.data[(w_base + cc) * co];
                  float* gk_row = &grads[li].kernel.data[(w_base + cc) * co];
                  const float xv = in_px[cc];
                  float acc = 0.0f;
                  for (int o = 0; o < co; ++o) {
                    gk_row[o] += xv * g_px[o];
                    acc += w_row[o] * g_px[o];
                  }
                  dx_px[cc] += acc;
                }
              }
            }
          }
        grad = std::move(dx);
      }
    }
  }
  return grads;
}

namespace {

void adam_update(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, double lr,
                 const TrainConfig& cfg, double bc1, double bc2) {
  for (size_t i = 0; i < w.data.size(); ++i) {
    const double gi = g.data[i];
    const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
    m.data[i] = static_cast<float>(mi);
    v.data[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    w.data[i] = static_cast<float>(w.data[i] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

}  // namespace

void adam_step(ModelSpec& spec, const std::vector<LayerWeights>& grads,
               AdamState& state, const TrainConfig& cfg, double lr) {
  if (grads.size() != spec.weights.size())
    throw std::invalid_argument("adam_step: gradient list length mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < spec.weights.size(); ++i) {
    if (spec.weights[i].kernel.empty()) continue;
    adam_update(spec.weights[i].kernel, grads[i].kernel, state.m[i].kernel,
                state.v[i].kernel, lr, cfg, bc1, bc2);
    adam_update(spec.weights[i].bias, grads[i].bias, state.m[i].bias, state.v[i].bias,
                lr, cfg, bc1, bc2);
  }
}

double PlateauScheduler::observe(double metric) {
  if (!has_best_ || metric > best_) {
    best_ = metric;
    has_best_ = true;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
  }
  return lr_;
}

double reduce_lr_on_plateau(const std::vector<double>& history, const TrainConfig& cfg) {
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
  for (double v : history) sched.observe(v);
  return sched.lr();
}

void init_weights(ModelSpec& spec, uint64_t seed) {
  Rng rng(seed);
  spec.weights.assign(spec.layers.size(), {});
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    auto [ks, bs] = weight_shapes(spec.layers[i]);
    if (ks.empty()) continue;
    int64_t fan_in;
    if (auto* c = std::get_if<Conv2DSpec>(&spec.layers[i]))
      fan_in = static_cast<int64_t>(c->kernel) * c->kernel * c->in_channels;
    else
      fan_in = std::get<DenseSpec>(spec.layers[i]).in_features;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor kern = Tensor::zeros(ks);
    for (float& v : kern.data) v = static_cast<float>(rng.uniform(-limit, limit));
    spec.weights[i].kernel = std::move(kern);
    spec.weights[i].bias = Tensor::zeros(bs);
  }
}

namespace {

Tensor pack_batch(const std::vector<Tensor>& inputs, const std::vector<size_t>& idx,
                  size_t lo, size_t hi) {
  const Tensor& first = inputs[idx[lo]];
  std::vector<int> shape = {static_cast<int>(hi - lo)};
  for (int d : first.shape) shape.push_back(d);
  Tensor out = Tensor::zeros(shape);
  for (size_t s = lo; s < hi; ++s)
    std::copy(inputs[idx[s]].data.begin(), inputs[idx[s]].data.end(),
              out.data.begin() + static_cast<int64_t>(s - lo) * first.numel());
  return out;
}

Tensor pack_labels(const std::vector<int>& labels, const std::vector<size_t>& idx,
                   size_t lo, size_t hi, int m) {
  Tensor out = Tensor::zeros({static_cast<int>(hi - lo), m});
  for (size_t s = lo; s < hi; ++s)
    out.data[static_cast<size_t>(s - lo) * m + labels[idx[s]]] = 1.0f;
  return out;
}

// accuracy + mean loss of a full pass at fixed weights
std::pair<double, double> eval_pass(const ModelSpec& spec, const std::vector<Tensor>& xs,
                                    const std::vector<int>& ys, int m) {
  int64_t correct = 0;
  double loss = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    Tensor p = forward(spec, xs[i]);
    int arg = 0;
    for (int c = 1; c < m; ++c)
      if (p.data[static_cast<size_t>(c)] > p.data[static_cast<size_t>(arg)]) arg = c;
    if (arg == ys[i]) ++correct;
    loss -= std::log(std::max(static_cast<double>(p.data[static_cast<size_t>(ys[i])]), 1e-12));
  }
  return {static_cast<double>(correct) / static_cast<double>(xs.size()),
          loss / static_cast<double>(xs.size())};
}

}  // namespace

FitResult fit(ModelSpec spec, const std::vector<Tensor>& train_inputs,
              const std::vector<int>& train_labels,
              const std::vector<Tensor>& val_inputs,
              const std::vector<int>& val_labels, const TrainConfig& cfg) {
  if (train_inputs.empty()) throw std::invalid_argument("fit: empty training set");
  if (train_inputs.size() != train_labels.size() || val_inputs.size() != val_labels.size())
    throw std::invalid_argument("fit: inputs/labels length mismatch");

  if (!spec.has_weights()) init_weights(spec, mix_seed(cfg.seed, 0x11217));
  validate_model(spec);
  const auto* last = std::get_if<DenseSpec>(&spec.layers.back());
  if (!last) throw std::invalid_argument("fit: final layer must be dense");
  const int m = last->out_features;

  AdamState state = make_adam_state(spec);
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
  Rng rng(mix_seed(cfg.seed, 0x5477));

  FitResult result;
  std::vector<LayerWeights> best_weights = spec.weights;
  double best_monitor = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  double lr = cfg.learning_rate;

  std::vector<size_t> order(train_inputs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int64_t epoch_correct = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      Tensor batch = pack_batch(train_inputs, order, lo, hi);
      Tensor labels = pack_labels(train_labels, order, lo, hi, m);

      Tensor probs = forward(spec, batch);
      for (size_t s = lo; s < hi; ++s) {
        const float* row = &probs.data[static_cast<size_t>(s - lo) * m];
        int arg = 0;
        for (int c = 1; c < m; ++c)
          if (row[c] > row[arg]) arg = c;
        if (arg == train_labels[order[s]]) ++epoch_correct;
        epoch_loss -=
            std::log(std::max(static_cast<double>(row[train_labels[order[s]]]), 1e-12));
      }

      std::vector<LayerWeights> grads = backward(spec, batch, labels);
      adam_step(spec, grads, state, cfg, lr);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = lr;
    stats.train_loss = epoch_loss / static_cast<double>(order.size());
    stats.train_accuracy =
        static_cast<double>(epoch_correct) / static_cast<double>(order.size());

    double monitor;
    if (!val_inputs.empty()) {
      auto [vacc, vloss] = eval_pass(spec, val_inputs, val_labels, m);
      stats.val_accuracy = vacc;
      stats.val_loss = vloss;
      monitor = vacc;
    } else {
      stats.val_accuracy = std::numeric_limits<double>::quiet_NaN();
      stats.val_loss = std::numeric_limits<double>::quiet_NaN();
      monitor = stats.train_accuracy;
    }

    if (monitor > best_monitor) {
      best_monitor = monitor;
      best_epoch = epoch;
      best_weights = spec.weights;
      if (!cfg.checkpoint_path.empty()) {
        ModelSpec snapshot = spec;
        save_model(snapshot, cfg.checkpoint_path);
        nlohmann::json side = {{"epoch", epoch},
                               {"val_accuracy", monitor},
                               {"learning_rate", lr}};
        std::ofstream out(cfg.checkpoint_path + ".json");
        out << side.dump(2) << "\n";
      }
    }
    lr = sched.observe(monitor);
    result.history.push_back(stats);
  }

  spec.weights = std::move(best_weights);
  result.model = std::move(spec);
  result.best_epoch = best_epoch;
  result.best_monitor = best_monitor;
  return result;
}

}  // namespace microquant
