// microquant command-line surface: train, quantize, eval, infer, augment,
// footprint, experiment, synth. Reports go to stdout as JSON; --csv writes
// the tabular form next to it.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "microquant/dataset.hpp"
#include "microquant/evaluate.hpp"
#include "microquant/experiment.hpp"
#include "microquant/image.hpp"
#include "microquant/model_io.hpp"
#include "microquant/quantizer.hpp"
#include "microquant/trainer.hpp"

namespace mq = microquant;

namespace {

mq::Dataset load_any_dataset(const std::string& path, const std::string& interp) {
  if (std::filesystem::is_directory(path))
    return mq::load_image_dir_dataset(path, mq::interp_from_name(interp));
  return mq::load_csv_dataset(path);
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << content;
}

nlohmann::json history_to_json(const std::vector<mq::EpochStats>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : history) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"learning_rate", e.learning_rate}};
    if (!std::isnan(e.val_accuracy)) {
      j["val_loss"] = e.val_loss;
      j["val_accuracy"] = e.val_accuracy;
    }
    arr.push_back(j);
  }
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tiny-CNN int8 quantization bench"};
  app.require_subcommand(1);

  std::string model_path, data_path, out_path, csv_path, arch_path, image_path;
  std::string interp = "area";
  std::string family = "A";
  uint64_t seed = 1;
  int epochs = 20, batch_size = 32, classes = 24, per_class = 50;
  int rep_samples = 128, train_size = 3000, test_per_class = 15;
  double val_split = 0.1;
  int64_t budget_bytes = mq::kDefaultBudgetBytes;
  bool control = false, raw_dir = false;

  auto* train = app.add_subcommand("train", "train a float32 model");
  train->add_option("--arch", arch_path, "architecture JSON config")->required();
  train->add_option("--data", data_path, "train dataset (CSV or PGM directory)")->required();
  train->add_option("--out", out_path, "output model path")->required();
  train->add_option("--epochs", epochs);
  train->add_option("--batch-size", batch_size);
  train->add_option("--seed", seed);
  train->add_option("--val-split", val_split, "held-out fraction for validation");
  train->add_option("--interp", interp, "resize method for directory ingestion");

  auto* quant = app.add_subcommand("quantize", "post-training int8 quantization");
  quant->add_option("--model", model_path, "float model file")->required();
  quant->add_option("--data", data_path, "representative dataset")->required();
  quant->add_option("--out", out_path, "output model path")->required();
  quant->add_option("--samples", rep_samples, "representative sample count");
  quant->add_option("--interp", interp);

  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data_path)->required();
  eval->add_option("--csv", csv_path, "also write the confusion matrix as CSV");
  eval->add_option("--interp", interp);

  auto* infer = app.add_subcommand("infer", "classify a single image");
  infer->add_option("--model", model_path)->required();
  infer->add_option("--image", image_path, "PGM input")->required();

  auto* augment = app.add_subcommand("augment", "write augmented variants of an image");
  augment->add_option("--image", image_path)->required();
  augment->add_option("--out", out_path, "output directory")->required();
  std::string aug_mode = "standard";
  augment->add_option("--mode", aug_mode, "standard | interpolation");
  augment->add_option("--seed", seed);

  auto* foot = app.add_subcommand("footprint", "memory footprint of a quantized model");
  foot->add_option("--model", model_path)->required();
  foot->add_option("--budget-bytes", budget_bytes);

  auto* exper = app.add_subcommand("experiment", "standard vs interpolation augmentation");
  exper->add_option("--arch", arch_path)->required();
  exper->add_option("--out", out_path, "write the JSON report here as well");
  exper->add_option("--csv", csv_path);
  exper->add_option("--classes", classes);
  exper->add_option("--per-class", per_class, "240x240 sources per class");
  exper->add_option("--train-size", train_size, "augmented train-set size per arm");
  exper->add_option("--test-per-class", test_per_class);
  exper->add_option("--epochs", epochs);
  exper->add_option("--batch-size", batch_size);
  exper->add_option("--seed", seed);
  exper->add_flag("--control", control, "same augmentation on both arms");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--classes", classes);
  synth->add_option("--per-class", per_class)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--family", family, "generator family A | B");
  synth->add_option("--out", out_path, "CSV path, or directory with --raw-dir")->required();
  synth->add_flag("--raw-dir", raw_dir, "write 240x240 PGMs in class directories");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      mq::ModelSpec spec = mq::load_arch_config(arch_path);
      mq::Dataset full = load_any_dataset(data_path, interp);
      auto [train_ds, val_ds] = mq::split_dataset(full, val_split, seed);
      auto [tx, ty] = mq::to_tensors(train_ds);
      auto [vx, vy] = mq::to_tensors(val_ds);
      mq::TrainConfig cfg;
      cfg.epochs = epochs;
      cfg.batch_size = batch_size;
      cfg.seed = seed;
      cfg.checkpoint_path = out_path;
      mq::FitResult result = mq::fit(std::move(spec), tx, ty, vx, vy, cfg);
      mq::save_model(result.model, out_path);
      nlohmann::json report = {{"history", history_to_json(result.history)},
                               {"best_epoch", result.best_epoch},
                               {"best_accuracy", result.best_monitor},
                               {"model", out_path},
                               {"parameters", mq::param_count(result.model)}};
      std::cout << report.dump(2) << "\n";
    } else if (*quant) {
      mq::LoadedModel loaded = mq::load_model(model_path);
      if (loaded.quantized) throw std::runtime_error("model is already quantized");
      mq::Dataset ds = load_any_dataset(data_path, interp);
      auto [xs, ys] = mq::to_tensors(ds);
      (void)ys;
      if (static_cast<int>(xs.size()) > rep_samples) xs.resize(static_cast<size_t>(rep_samples));
      mq::CalibrationProfile profile = mq::calibrate(loaded.float_model, xs);
      mq::QuantizedModel qm = mq::quantize_model(loaded.float_model, profile);
      mq::save_model(qm, out_path);
      nlohmann::json report = {{"model", out_path},
                               {"representative_samples", xs.size()},
                               {"input_scale", qm.input_params.scale},
                               {"input_zero_point", qm.input_params.zero_point}};
      std::cout << report.dump(2) << "\n";
    } else if (*eval) {
      mq::LoadedModel loaded = mq::load_model(model_path);
      mq::Dataset ds = load_any_dataset(data_path, interp);
      mq::EvalReport r = loaded.quantized ? mq::evaluate(loaded.quant_model, ds)
                                          : mq::evaluate(loaded.float_model, ds);
      if (!csv_path.empty()) write_text(csv_path, mq::eval_report_to_csv(r));
      std::cout << mq::eval_report_to_json(r).dump(2) << "\n";
    } else if (*infer) {
      mq::LoadedModel loaded = mq::load_model(model_path);
      mq::Image img = mq::load_image(image_path);
      if (img.width != 28 || img.height != 28)
        img = mq::resize(img, 28, 28, mq::InterpMethod::kArea);
      const mq::Tensor x = mq::normalize(img);
      const mq::Tensor probs = loaded.quantized
                                   ? mq::infer_quantized(loaded.quant_model, x)
                                   : mq::forward(loaded.float_model, x);
      const int pred = mq::argmax_lowest(probs.data.data(), static_cast<int>(probs.numel()));
      nlohmann::json report = {{"prediction", pred}, {"probabilities", probs.data}};
      std::cout << report.dump(2) << "\n";
    } else if (*augment) {
      mq::Image img = mq::load_image(image_path);
      std::filesystem::create_directories(out_path);
      nlohmann::json written = nlohmann::json::array();
      if (aug_mode == "standard") {
        mq::AugmentParams p;
        p.seed = seed;
        const mq::Image out = mq::augment_standard(img, p);
        const std::string path = out_path + "/standard.pgm";
        mq::save_pgm(out, path);
        written.push_back(path);
      } else if (aug_mode == "interpolation") {
        const auto variants = mq::augment_interpolation(img, 28);
        for (size_t i = 0; i < variants.size(); ++i) {
          const std::string path =
              out_path + "/" + mq::interp_name(mq::kAllInterpMethods[i]) + ".pgm";
          mq::save_pgm(variants[i], path);
          written.push_back(path);
        }
      } else {
        throw std::runtime_error("unknown augment mode: " + aug_mode);
      }
      std::cout << nlohmann::json{{"written", written}}.dump(2) << "\n";
    } else if (*foot) {
      mq::LoadedModel loaded = mq::load_model(model_path);
      if (!loaded.quantized) throw std::runtime_error("footprint expects a quantized model");
      std::cout << mq::footprint_to_json(mq::footprint(loaded.quant_model, budget_bytes)).dump(2)
                << "\n";
    } else if (*exper) {
      mq::ExperimentConfig cfg;
      cfg.architecture = mq::load_arch_config(arch_path);
      cfg.classes = classes;
      cfg.per_class = per_class;
      cfg.train_size = train_size;
      cfg.test_per_class = test_per_class;
      cfg.epochs = epochs;
      cfg.batch_size = batch_size;
      cfg.seed = seed;
      cfg.control = control;
      const mq::ExperimentReport r = mq::experiment_augmentation_compare(cfg);
      const std::string json = mq::experiment_report_to_json(r).dump(2) + "\n";
      if (!out_path.empty()) write_text(out_path, json);
      if (!csv_path.empty()) write_text(csv_path, mq::experiment_report_to_csv(r));
      std::cout << json;
    } else if (*synth) {
      const int fam = family == "B" || family == "b" ? 1 : 0;
      if (raw_dir) {
        std::filesystem::create_directories(out_path);
        const auto sources = mq::synth_sources_240(classes, per_class, seed, fam);
        std::map<int, int> per_label;
        for (const mq::Sample& s : sources) {
          char name[32];
          std::snprintf(name, sizeof name, "%02d", s.label);
          const std::string dir = out_path + "/" + name;
          std::filesystem::create_directories(dir);
          std::snprintf(name, sizeof name, "img%04d.pgm", per_label[s.label]++);
          mq::save_pgm(s.image, dir + "/" + name);
        }
        std::cout << nlohmann::json{{"written", sources.size()}, {"dir", out_path}}.dump(2)
                  << "\n";
      } else {
        const mq::Dataset ds = mq::synth_dataset(classes, per_class, seed, fam);
        mq::write_csv_dataset(ds, out_path);
        std::cout << nlohmann::json{{"written", ds.samples.size()}, {"csv", out_path}}.dump(2)
                  << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "microquant: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
