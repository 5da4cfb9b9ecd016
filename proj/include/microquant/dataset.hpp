#pragma once

// Dataset ingestion (CSV pixel rows, PGM class directories), the synthetic
// desk-scale generator, and conversion to model inputs.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "microquant/image.hpp"
#include "microquant/tensor.hpp"

namespace microquant {

struct Sample {
  Image image;
  int label = 0;
  std::string tag;  // provenance: source/split
};

struct Dataset {
  std::vector<Sample> samples;
  int class_count = 24;
};

// Sign-MNIST-style rows: header label,pixel1,...,pixel784; pixel values
// 0-255; labels 0-24 with 9 absent, re-indexed densely (10..24 -> 9..23).
// Malformed rows are reported with their 1-based line number.
Dataset load_csv_dataset(const std::string& path);

// Inverse of load_csv_dataset (labels written back with the gap at 9);
// load->write->load round-trips to identical file content.
void write_csv_dataset(const Dataset& ds, const std::string& path);

// Directory layout <root>/<class_name>/*.pgm with class names mapped
// alphabetically to indices; images are resized to 28x28 with `method`.
// A class count other than 24 warns and proceeds with what was found.
Dataset load_image_dir_dataset(const std::string& root,
                               InterpMethod method = InterpMethod::kArea);

// Synthetic hand-shape stand-in: class c renders a bright/dim blob pair
// oriented at c * (360/classes) degrees with seeded jitter. family selects a
// rendering profile (0 and 1 are deliberately different distributions, for
// generalization testing). Sources are 240x240.
std::vector<Sample> synth_sources_240(int classes, int per_class, uint64_t seed,
                                      int family = 0);

// The sources, area-downscaled to 28x28.
Dataset synth_dataset(int classes, int per_class, uint64_t seed, int family = 0);

// normalize() every image; labels as a parallel vector.
std::pair<std::vector<Tensor>, std::vector<int>> to_tensors(const Dataset& ds);

// Deterministic split: shuffles indices with `seed` and moves `fraction` of
// the samples into the second dataset.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction,
                                          uint64_t seed);

}  // namespace microquant
