#pragma once

// Accuracy/confusion evaluation for float and quantized models, and the
// float-vs-int8 agreement measure. Argmax ties break toward the lowest class
// index everywhere.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "microquant/dataset.hpp"
#include "microquant/netgraph.hpp"
#include "microquant/quantizer.hpp"

namespace microquant {

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<int64_t>> confusion;  // [truth][prediction]
  std::vector<double> precision;                // per class; 0 when undefined
  std::vector<double> recall;
  int64_t sample_count = 0;
};

int argmax_lowest(const float* values, int n);

EvalReport evaluate(const ModelSpec& model, const Dataset& ds);
EvalReport evaluate(const QuantizedModel& model, const Dataset& ds);

// Fraction of samples where float and int8 paths agree on the argmax.
double agreement(const ModelSpec& model_f, const QuantizedModel& model_q,
                 const Dataset& ds);

nlohmann::json eval_report_to_json(const EvalReport& r);
std::string eval_report_to_csv(const EvalReport& r);

}  // namespace microquant
