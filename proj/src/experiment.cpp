#include "microquant/experiment.hpp"

#include <sstream>
#include <stdexcept>

#include "microquant/dataset.hpp"
#include "microquant/evaluate.hpp"
#include "microquant/quantizer.hpp"
#include "microquant/rng.hpp"
#include "microquant/trainer.hpp"

namespace microquant {

namespace {

// Sources are generated class-major; walk them round-robin over classes so a
// train set smaller than (variants x sources) still covers every class.
size_t robin_index(size_t k, int classes, int per_class) {
  const size_t cls = k % static_cast<size_t>(classes);
  const size_t item = (k / static_cast<size_t>(classes)) % static_cast<size_t>(per_class);
  return cls * static_cast<size_t>(per_class) + item;
}

// Arm A: each source is downscaled to 28x28 once (area, as in the base
// pipeline) and then perturbed by the standard augmentation chain.
Dataset build_standard_train(const std::vector<Sample>& sources, int classes,
                             int per_class, int train_size, uint64_t seed) {
  Dataset ds;
  ds.class_count = classes;
  for (int i = 0; i < train_size; ++i) {
    const Sample& src = sources[robin_index(static_cast<size_t>(i), classes, per_class)];
    const Image base = resize(src.image, 28, 28, InterpMethod::kArea);
    AugmentParams p;
    p.seed = mix_seed(seed, 0xa060000u + static_cast<uint64_t>(i));
    ds.samples.push_back({augment_standard(base, p), src.label, "aug:standard"});
  }
  return ds;
}

// Arm B: sources cycle through the five interpolation kernels, 240 -> 28.
Dataset build_interpolation_train(const std::vector<Sample>& sources, int classes,
                                  int per_class, int train_size) {
  Dataset ds;
  ds.class_count = classes;
  int emitted = 0;
  for (size_t g = 0; emitted < train_size; ++g) {
    const Sample& src = sources[robin_index(g, classes, per_class)];
    for (const Image& img : augment_interpolation(src.image, 28)) {
      if (emitted >= train_size) break;
      ds.samples.push_back({img, src.label, "aug:interpolation"});
      ++emitted;
    }
  }
  return ds;
}

ArmReport run_arm(const std::string& name, const ExperimentConfig& cfg,
                  const Dataset& train, const Dataset& test, const Dataset& gen) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;

  auto [train_x, train_y] = to_tensors(train);
  auto [test_x, test_y] = to_tensors(test);

  FitResult fitted = fit(cfg.architecture, train_x, train_y, test_x, test_y, tc);

  const int rep = std::min<int>(cfg.representative_samples,
                                static_cast<int>(test_x.size()));
  std::vector<Tensor> representative(test_x.begin(), test_x.begin() + rep);
  const CalibrationProfile profile = calibrate(fitted.model, representative);
  const QuantizedModel qm = quantize_model(fitted.model, profile);

  ArmReport r;
  r.name = name;
  r.train_accuracy = fitted.history.back().train_accuracy;
  r.float_test_accuracy = evaluate(fitted.model, test).accuracy;
  r.int8_test_accuracy = evaluate(qm, test).accuracy;
  r.generalization_accuracy = evaluate(qm, gen).accuracy;
  r.quantization_drop = r.float_test_accuracy - r.int8_test_accuracy;
  return r;
}

}  // namespace

ExperimentReport experiment_augmentation_compare(const ExperimentConfig& cfg) {
  if (cfg.per_class < 1)
    throw std::invalid_argument("experiment: need at least one source image per class");
  validate_model(cfg.architecture);

  const std::vector<Sample> sources =
      synth_sources_240(cfg.classes, cfg.per_class, cfg.seed, /*family=*/0);
  const Dataset test =
      synth_dataset(cfg.classes, cfg.test_per_class, mix_seed(cfg.seed, 0x7e57), 0);
  const Dataset gen =
      synth_dataset(cfg.classes, cfg.test_per_class, mix_seed(cfg.seed, 0x6e4), 1);

  const Dataset train_std =
      build_standard_train(sources, cfg.classes, cfg.per_class, cfg.train_size, cfg.seed);
  const Dataset train_interp =
      cfg.control ? train_std
                  : build_interpolation_train(sources, cfg.classes, cfg.per_class,
                                              cfg.train_size);

  ExperimentReport report;
  report.standard = run_arm("standard", cfg, train_std, test, gen);
  report.interpolation = run_arm("interpolation", cfg, train_interp, test, gen);
  return report;
}

namespace {

nlohmann::json arm_to_json(const ArmReport& a) {
  return {{"name", a.name},
          {"train_accuracy", a.train_accuracy},
          {"float_test_accuracy", a.float_test_accuracy},
          {"int8_test_accuracy", a.int8_test_accuracy},
          {"generalization_accuracy", a.generalization_accuracy},
          {"quantization_drop", a.quantization_drop}};
}

}  // namespace

nlohmann::json experiment_report_to_json(const ExperimentReport& r) {
  return {{"models", {arm_to_json(r.standard), arm_to_json(r.interpolation)}}};
}

std::string experiment_report_to_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "model,train_accuracy,float_test_accuracy,int8_test_accuracy,"
         "generalization_accuracy,quantization_drop\n";
  for (const ArmReport* a : {&r.standard, &r.interpolation})
    out << a->name << "," << a->train_accuracy << "," << a->float_test_accuracy << ","
        << a->int8_test_accuracy << "," << a->generalization_accuracy << ","
        << a->quantization_drop << "\n";
  return out.str();
}

}  // namespace microquant
