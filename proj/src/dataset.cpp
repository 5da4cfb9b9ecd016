#include "microquant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "microquant/rng.hpp"

namespace microquant {

namespace {

constexpr int kCsvSide = 28;
constexpr int kCsvPixels = kCsvSide * kCsvSide;

[[noreturn]] void csv_error(const std::string& path, size_t line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);

  Dataset ds;
  std::string line;
  size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("label", 0) == 0) continue;  // header row
      csv_error(path, line_no, "missing 'label,pixel1,...' header");
    }

    std::vector<int> values;
    values.reserve(kCsvPixels + 1);
    size_t start = 0;
    while (start <= line.size()) {
      const size_t comma = line.find(',', start);
      const std::string field =
          line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      int v = 0;
      try {
        size_t used = 0;
        v = std::stoi(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        csv_error(path, line_no, "non-numeric field '" + field + "'");
      }
      values.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (values.size() != kCsvPixels + 1)
      csv_error(path, line_no,
                "expected 1 label + " + std::to_string(kCsvPixels) + " pixels, got " +
                    std::to_string(values.size()) + " fields");

    const int raw_label = values[0];
    if (raw_label < 0 || raw_label > 24 || raw_label == 9)
      csv_error(path, line_no, "label " + std::to_string(raw_label) + " out of range");
    const int label = raw_label < 9 ? raw_label : raw_label - 1;  // close the J gap

    Image img(kCsvSide, kCsvSide);
    for (int i = 0; i < kCsvPixels; ++i) {
      const int v = values[static_cast<size_t>(i) + 1];
      if (v < 0 || v > 255) csv_error(path, line_no, "pixel value out of [0,255]");
      img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
    }
    ds.samples.push_back({std::move(img), label, "csv:" + path});
  }
  return ds;
}

void write_csv_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  out << "label";
  for (int i = 1; i <= kCsvPixels; ++i) out << ",pixel" << i;
  out << "\n";
  for (const Sample& s : ds.samples) {
    if (s.image.width != kCsvSide || s.image.height != kCsvSide)
      throw std::invalid_argument("write_csv_dataset: images must be 28x28");
    const int raw = s.label < 9 ? s.label : s.label + 1;  // reopen the J gap
    out << raw;
    for (uint8_t p : s.image.pixels) out << "," << static_cast<int>(p);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_image_dir_dataset(const std::string& root, InterpMethod method) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root);

  std::vector<std::string> class_names;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
  std::sort(class_names.begin(), class_names.end());

  Dataset ds;
  ds.class_count = static_cast<int>(class_names.size());
  if (ds.class_count != 24)
    std::cerr << "microquant: warning: " << root << " has " << ds.class_count
              << " class directories (expected 24); proceeding with what was found\n";

  for (size_t ci = 0; ci < class_names.size(); ++ci) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / class_names[ci]))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      Image img = load_image(file.string());
      if (img.width != kCsvSide || img.height != kCsvSide)
        img = resize(img, kCsvSide, kCsvSide, method);
      ds.samples.push_back({std::move(img), static_cast<int>(ci), "dir:" + file.string()});
    }
  }
  if (ds.samples.empty())
    std::cerr << "microquant: warning: no images found under " << root << "\n";
  return ds;
}

namespace {

struct SynthProfile {
  double radius, sigma_bright, sigma_dim;
  double inten_bright, inten_dim;
  double bg_noise;       // uniform background noise amplitude
  double bg_gradient;    // vertical gradient added across the frame
};

SynthProfile synth_profile(int family) {
  if (family == 0) return {55.0, 20.0, 26.0, 230.0, 130.0, 25.0, 0.0};
  return {45.0, 26.0, 34.0, 200.0, 105.0, 30.0, 40.0};
}

Image render_synth(int classes, int cls, uint64_t sample_seed, const SynthProfile& pr) {
  Rng rng(sample_seed);
  constexpr int kSide = 240;
  const double base_angle = 2.0 * std::numbers::pi * cls / classes;
  const double angle = base_angle + rng.uniform(-2.0, 2.0) * std::numbers::pi / 180.0;
  const double radius = pr.radius + rng.uniform(-4.0, 4.0);
  const double cx = kSide / 2.0 + rng.uniform(-3.0, 3.0);
  const double cy = kSide / 2.0 + rng.uniform(-3.0, 3.0);
  const double ib = pr.inten_bright + rng.uniform(-15.0, 15.0);
  const double id = pr.inten_dim + rng.uniform(-15.0, 15.0);
  const double sb = pr.sigma_bright * rng.uniform(0.9, 1.1);
  const double sd = pr.sigma_dim * rng.uniform(0.9, 1.1);

  const double bx = cx + radius * std::cos(angle), by = cy + radius * std::sin(angle);
  const double dx = cx - radius * std::cos(angle), dy = cy - radius * std::sin(angle);

  Image img(kSide, kSide);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      double v = rng.uniform(0.0, pr.bg_noise) + pr.bg_gradient * y / kSide;
      const double db2 = (x - bx) * (x - bx) + (y - by) * (y - by);
      const double dd2 = (x - dx) * (x - dx) + (y - dy) * (y - dy);
      v += ib * std::exp(-db2 / (2.0 * sb * sb));
      v += id * std::exp(-dd2 / (2.0 * sd * sd));
      if (v < 0.0) v = 0.0;
      if (v > 255.0) v = 255.0;
      img.at(x, y) = static_cast<uint8_t>(std::floor(v + 0.5));
    }
  return img;
}

}  // namespace

std::vector<Sample> synth_sources_240(int classes, int per_class, uint64_t seed, int family) {
  if (classes < 1 || per_class < 1)
    throw std::invalid_argument("synth_sources_240: classes and per_class must be >= 1");
  const SynthProfile pr = synth_profile(family);
  const uint64_t family_seed = mix_seed(seed, 0xfa0000u + static_cast<uint64_t>(family));
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(classes) * per_class);
  const std::string tag = "synth:f" + std::to_string(family) + ":s" + std::to_string(seed);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      const uint64_t ss = mix_seed(family_seed, (static_cast<uint64_t>(c) << 20) | static_cast<uint64_t>(i));
      out.push_back({render_synth(classes, c, ss, pr), c, tag});
    }
  return out;
}

Dataset synth_dataset(int classes, int per_class, uint64_t seed, int family) {
  Dataset ds;
  ds.class_count = classes;
  for (Sample& s : synth_sources_240(classes, per_class, seed, family)) {
    s.image = resize(s.image, 28, 28, InterpMethod::kArea);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::pair<std::vector<Tensor>, std::vector<int>> to_tensors(const Dataset& ds) {
  std::vector<Tensor> xs;
  std::vector<int> ys;
  xs.reserve(ds.samples.size());
  ys.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    xs.push_back(normalize(s.image));
    ys.push_back(s.label);
  }
  return {std::move(xs), std::move(ys)};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("split_dataset: fraction outside [0,1]");
  std::vector<size_t> order(ds.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5b117));
  rng.shuffle(order);
  const size_t held = static_cast<size_t>(std::llround(fraction * static_cast<double>(order.size())));
  Dataset first, second;
  first.class_count = second.class_count = ds.class_count;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < order.size() - held)
      first.samples.push_back(ds.samples[order[i]]);
    else
      second.samples.push_back(ds.samples[order[i]]);
  }
  return {std::move(first), std::move(second)};
}

}  // namespace microquant
