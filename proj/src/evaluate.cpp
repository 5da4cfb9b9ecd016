#include "microquant/evaluate.hpp"

#include <sstream>
#include <stdexcept>

namespace microquant {

int argmax_lowest(const float* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

template <class Infer>
EvalReport evaluate_with(const Dataset& ds, int classes, Infer&& infer) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");

  EvalReport r;
  r.sample_count = static_cast<int64_t>(ds.samples.size());
  r.confusion.assign(static_cast<size_t>(classes), std::vector<int64_t>(static_cast<size_t>(classes), 0));
  for (const Sample& s : ds.samples) {
    if (s.label < 0 || s.label >= classes)
      throw std::invalid_argument("evaluate: label outside class range");
    const Tensor probs = infer(normalize(s.image));
    const int pred = argmax_lowest(probs.data.data(), classes);
    ++r.confusion[static_cast<size_t>(s.label)][static_cast<size_t>(pred)];
  }

  int64_t trace = 0;
  for (int c = 0; c < classes; ++c) trace += r.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.sample_count);

  r.precision.assign(static_cast<size_t>(classes), 0.0);
  r.recall.assign(static_cast<size_t>(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    int64_t row = 0, col = 0;
    for (int k = 0; k < classes; ++k) {
      row += r.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
      col += r.confusion[static_cast<size_t>(k)][static_cast<size_t>(c)];
    }
    const int64_t diag = r.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    r.precision[static_cast<size_t>(c)] = col ? static_cast<double>(diag) / static_cast<double>(col) : 0.0;
    r.recall[static_cast<size_t>(c)] = row ? static_cast<double>(diag) / static_cast<double>(row) : 0.0;
  }
  return r;
}

int final_classes(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw std::invalid_argument("evaluate: model has no layers");
  if (auto* d = std::get_if<DenseSpec>(&layers.back())) return d->out_features;
  throw std::invalid_argument("evaluate: model must end with a dense layer");
}

}  // namespace

EvalReport evaluate(const ModelSpec& model, const Dataset& ds) {
  const int classes = final_classes(model.layers);
  return evaluate_with(ds, classes, [&](const Tensor& x) { return forward(model, x); });
}

EvalReport evaluate(const QuantizedModel& model, const Dataset& ds) {
  const int classes = final_classes(model.layers);
  return evaluate_with(ds, classes, [&](const Tensor& x) { return infer_quantized(model, x); });
}

double agreement(const ModelSpec& model_f, const QuantizedModel& model_q, const Dataset& ds) {
  if (model_f.layers != model_q.layers ||
      model_f.input_shape != model_q.input_shape)
    throw std::invalid_argument("agreement: architecture mismatch");
  if (ds.samples.empty()) throw std::invalid_argument("agreement: empty dataset");
  const int classes = final_classes(model_f.layers);

  int64_t same = 0;
  for (const Sample& s : ds.samples) {
    const Tensor x = normalize(s.image);
    const Tensor pf = forward(model_f, x);
    const Tensor pq = infer_quantized(model_q, x);
    if (argmax_lowest(pf.data.data(), classes) == argmax_lowest(pq.data.data(), classes))
      ++same;
  }
  return static_cast<double>(same) / static_cast<double>(ds.samples.size());
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy},
          {"sample_count", r.sample_count},
          {"confusion", r.confusion},
          {"precision", r.precision},
          {"recall", r.recall}};
}

std::string eval_report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "truth";
  for (size_t c = 0; c < r.confusion.size(); ++c) out << ",pred" << c;
  out << "\n";
  for (size_t t = 0; t < r.confusion.size(); ++t) {
    out << t;
    for (int64_t v : r.confusion[t]) out << "," << v;
    out << "\n";
  }
  return out.str();
}

}  // namespace microquant
