#include "microquant/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "microquant/rng.hpp"

namespace microquant {

Image::Image(int w, int h, uint8_t fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("Image: dimensions must be >= 1");
  pixels.assign(static_cast<size_t>(w) * h, fill);
}

Image::Image(int w, int h, std::vector<uint8_t> px)
    : width(w), height(h), pixels(std::move(px)) {
  if (w < 1 || h < 1) throw std::invalid_argument("Image: dimensions must be >= 1");
  if (pixels.size() != static_cast<size_t>(w) * h)
    throw std::invalid_argument("Image: pixel count does not match dimensions");
}

const char* interp_name(InterpMethod m) {
  switch (m) {
    case InterpMethod::kNearest: return "nearest";
    case InterpMethod::kBilinear: return "bilinear";
    case InterpMethod::kArea: return "area";
    case InterpMethod::kBicubic: return "bicubic";
    case InterpMethod::kLanczos4: return "lanczos4";
  }
  return "?";
}

InterpMethod interp_from_name(const std::string& name) {
  for (InterpMethod m : kAllInterpMethods)
    if (name == interp_name(m)) return m;
  throw std::invalid_argument("unknown interpolation method: " + name);
}

namespace {

uint8_t round_clamp_u8(double v) {
  double r = v < 0.0 ? std::ceil(v - 0.5) : std::floor(v + 0.5);
  if (r < 0.0) r = 0.0;
  if (r > 255.0) r = 255.0;
  return static_cast<uint8_t>(r);
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

double cubic_keys(double t) {  // Keys kernel, a = -0.75
  constexpr double a = -0.75;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

double lanczos4(double t) {
  if (t == 0.0) return 1.0;
  if (std::abs(t) >= 4.0) return 0.0;
  const double pt = std::numbers::pi * t;
  return 4.0 * std::sin(pt) * std::sin(pt / 4.0) / (pt * pt);
}

// Per-axis filter taps: start index plus `count` normalized weights.
struct AxisTaps {
  int start = 0;
  int count = 0;
  std::array<double, 8> w{};
};

template <class Kernel>
std::vector<AxisTaps> build_taps(int dst, int src, int radius, Kernel k) {
  std::vector<AxisTaps> taps(static_cast<size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    const double s = (d + 0.5) * scale - 0.5;
    AxisTaps t;
    t.start = static_cast<int>(std::floor(s)) - radius + 1;
    t.count = 2 * radius;
    double sum = 0.0;
    for (int i = 0; i < t.count; ++i) {
      t.w[static_cast<size_t>(i)] = k(s - (t.start + i));
      sum += t.w[static_cast<size_t>(i)];
    }
    for (int i = 0; i < t.count; ++i) t.w[static_cast<size_t>(i)] /= sum;
    taps[static_cast<size_t>(d)] = t;
  }
  return taps;
}

template <class Kernel>
Image resize_separable(const Image& img, int out_w, int out_h, int radius, Kernel k) {
  const auto tx = build_taps(out_w, img.width, radius, k);
  const auto ty = build_taps(out_h, img.height, radius, k);

  // horizontal pass into a float buffer, then vertical
  std::vector<double> tmp(static_cast<size_t>(out_w) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < out_w; ++x) {
      const AxisTaps& t = tx[static_cast<size_t>(x)];
      double acc = 0.0;
      for (int i = 0; i < t.count; ++i)
        acc += t.w[static_cast<size_t>(i)] *
               img.at(clampi(t.start + i, 0, img.width - 1), y);
      tmp[static_cast<size_t>(y) * out_w + x] = acc;
    }

  Image out(out_w, out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const AxisTaps& t = ty[static_cast<size_t>(y)];
      double acc = 0.0;
      for (int i = 0; i < t.count; ++i)
        acc += t.w[static_cast<size_t>(i)] *
               tmp[static_cast<size_t>(clampi(t.start + i, 0, img.height - 1)) * out_w + x];
      out.at(x, y) = round_clamp_u8(acc);
    }
  return out;
}

Image resize_nearest(const Image& img, int out_w, int out_h) {
  Image out(out_w, out_h);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double s = (y + 0.5) * sy - 0.5;
    const int iy = clampi(static_cast<int>(s < 0.0 ? std::ceil(s - 0.5) : std::floor(s + 0.5)),
                          0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const double u = (x + 0.5) * sx - 0.5;
      const int ix = clampi(static_cast<int>(u < 0.0 ? std::ceil(u - 0.5) : std::floor(u + 0.5)),
                            0, img.width - 1);
      out.at(x, y) = img.at(ix, iy);
    }
  }
  return out;
}

// Coverage-weighted box mean over the destination pixel's source footprint.
Image resize_area_box(const Image& img, int out_w, int out_h) {
  Image out(out_w, out_h);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    const int iy0 = static_cast<int>(std::floor(y0));
    const int iy1 = std::min(static_cast<int>(std::ceil(y1)), img.height);
    for (int x = 0; x < out_w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      const int ix0 = static_cast<int>(std::floor(x0));
      const int ix1 = std::min(static_cast<int>(std::ceil(x1)), img.width);
      double acc = 0.0, total = 0.0;
      for (int iy = iy0; iy < iy1; ++iy) {
        const double cy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        if (cy <= 0.0) continue;
        for (int ix = ix0; ix < ix1; ++ix) {
          const double cx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          if (cx <= 0.0) continue;
          acc += cx * cy * img.at(ix, iy);
          total += cx * cy;
        }
      }
      out.at(x, y) = round_clamp_u8(acc / total);
    }
  }
  return out;
}

}  // namespace

Image resize(const Image& img, int out_w, int out_h, InterpMethod m) {
  if (out_w < 1 || out_h < 1)
    throw std::invalid_argument("resize: output dimensions must be >= 1");
  switch (m) {
    case InterpMethod::kNearest:
      return resize_nearest(img, out_w, out_h);
    case InterpMethod::kBilinear:
      return resize_separable(img, out_w, out_h, 1,
                              [](double t) { return std::max(0.0, 1.0 - std::abs(t)); });
    case InterpMethod::kArea:
      // box mean when downscaling; bilinear otherwise (matches the usual
      // semantics of the named method)
      if (out_w <= img.width && out_h <= img.height)
        return resize_area_box(img, out_w, out_h);
      return resize(img, out_w, out_h, InterpMethod::kBilinear);
    case InterpMethod::kBicubic:
      return resize_separable(img, out_w, out_h, 2, cubic_keys);
    case InterpMethod::kLanczos4:
      return resize_separable(img, out_w, out_h, 4, lanczos4);
  }
  throw std::invalid_argument("resize: bad method");
}

Image rotate(const Image& img, double degrees) {
  if (!std::isfinite(degrees)) throw std::invalid_argument("rotate: non-finite angle");
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;

  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // inverse map; out-of-bounds taps read as 0
      const double sx = cx + (x - cx) * c - (y - cy) * s;
      const double sy = cy + (x - cx) * s + (y - cy) * c;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto tap = [&](int ix, int iy) -> double {
        if (ix < 0 || iy < 0 || ix >= img.width || iy >= img.height) return 0.0;
        return img.at(ix, iy);
      };
      const double v = (1 - fx) * (1 - fy) * tap(x0, y0) + fx * (1 - fy) * tap(x0 + 1, y0) +
                       (1 - fx) * fy * tap(x0, y0 + 1) + fx * fy * tap(x0 + 1, y0 + 1);
      out.at(x, y) = round_clamp_u8(v);
    }
  return out;
}

Image crop(const Image& img, int x, int y, int w, int h) {
  if (w < 1 || h < 1 || x < 0 || y < 0 || x + w > img.width || y + h > img.height)
    throw std::out_of_range("crop: rectangle outside image bounds");
  Image out(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(c, r) = img.at(x + c, y + r);
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("adjust_contrast: factor must be > 0");
  Image out(img.width, img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = round_clamp_u8(128.0 + factor * (img.pixels[i] - 128.0));
  return out;
}

Image augment_standard(const Image& img, const AugmentParams& p) {
  if (p.crop_size < 1 || p.crop_size > img.width || p.crop_size > img.height)
    throw std::invalid_argument("augment_standard: image smaller than crop size");
  if (p.rotation_degrees_max < 0.0)
    throw std::invalid_argument("augment_standard: negative rotation range");

  Rng rng(p.seed);
  const double deg = rng.uniform(-p.rotation_degrees_max, p.rotation_degrees_max);
  Image work = rotate(img, deg);
  const int ox = rng.uniform_int(img.width - p.crop_size + 1);
  const int oy = rng.uniform_int(img.height - p.crop_size + 1);
  work = crop(work, ox, oy, p.crop_size, p.crop_size);
  work = resize(work, p.target_size, p.target_size, InterpMethod::kBilinear);
  const double factor = rng.uniform(1.0 - p.contrast_jitter, 1.0 + p.contrast_jitter);
  return adjust_contrast(work, factor);
}

std::vector<Image> augment_interpolation(const Image& img, int target) {
  std::vector<Image> out;
  out.reserve(kAllInterpMethods.size());
  for (InterpMethod m : kAllInterpMethods) out.push_back(resize(img, target, target, m));
  return out;
}

Tensor normalize(const Image& img) {
  Tensor t = Tensor::zeros({img.height, img.width, 1});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t.data[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

namespace {

int next_pnm_int(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw std::runtime_error("PNM: malformed header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw std::runtime_error("unsupported image format (want P5/P6 PNM): " + path);
  const bool color = m1 == '6';
  const int w = next_pnm_int(in);
  const int h = next_pnm_int(in);
  const int maxval = next_pnm_int(in);
  if (maxval != 255) throw std::runtime_error("PNM: only maxval 255 supported: " + path);

  const size_t n = static_cast<size_t>(w) * h;
  std::vector<uint8_t> raw(color ? n * 3 : n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw std::runtime_error("PNM: truncated pixel data: " + path);

  Image img(w, h);
  if (!color) {
    img.pixels = std::move(raw);
  } else {
    for (size_t i = 0; i < n; ++i) {  // BT.601 luma
      const double y = 0.299 * raw[i * 3] + 0.587 * raw[i * 3 + 1] + 0.114 * raw[i * 3 + 2];
      img.pixels[i] = round_clamp_u8(y);
    }
  }
  return img;
}

void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace microquant
