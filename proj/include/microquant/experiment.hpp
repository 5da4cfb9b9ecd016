#pragma once

// The two-arm augmentation comparison: the same architecture trained once on
// standard augmentation (rotate/crop/resize/contrast) and once on
// interpolation augmentation (the five resize kernels), both quantized, with
// a four-column accuracy report per arm. Fully deterministic under a fixed
// seed.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "microquant/netgraph.hpp"

namespace microquant {

struct ExperimentConfig {
  ModelSpec architecture;  // untrained; weights are initialized per arm
  int classes = 24;
  int per_class = 50;        // 240x240 source images per class
  int train_size = 3000;     // augmented train-set size, identical for both arms
  int test_per_class = 15;   // held-out synthetic test images per class
  int epochs = 20;
  int batch_size = 32;
  int representative_samples = 128;
  uint64_t seed = 1;
  bool control = false;  // run standard augmentation on both arms
};

struct ArmReport {
  std::string name;
  double train_accuracy = 0.0;       // final-epoch training accuracy
  double float_test_accuracy = 0.0;
  double int8_test_accuracy = 0.0;
  double generalization_accuracy = 0.0;  // int8 model on the family-B set
  double quantization_drop = 0.0;        // float minus int8 test accuracy
};

struct ExperimentReport {
  ArmReport standard;
  ArmReport interpolation;
};

ExperimentReport experiment_augmentation_compare(const ExperimentConfig& cfg);

nlohmann::json experiment_report_to_json(const ExperimentReport& r);
std::string experiment_report_to_csv(const ExperimentReport& r);

}  // namespace microquant
