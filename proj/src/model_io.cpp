#include "microquant/model_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace microquant {

uint32_t crc32(const uint8_t* data, size_t len) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

namespace {

const char kMagic[4] = {'T', 'Q', 'M', '1'};
constexpr uint16_t kVersion = 1;

enum class Dtype : uint8_t { kF32 = 0, kI8 = 1, kI32 = 2 };

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

void pad4(std::vector<uint8_t>& b) {
  while (b.size() % 4 != 0) b.push_back(0);
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& b, size_t limit) : b_(b), limit_(limit) {}

  size_t pos() const { return pos_; }
  size_t limit() const { return limit_; }

  void need(size_t n) const {
    if (pos_ + n > limit_) throw ModelIoError(ModelIoStatus::kTruncated, "truncated model file");
  }
  uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  void skip(size_t n) {
    need(n);
    pos_ += n;
  }
  void align4() {
    while (pos_ % 4 != 0) {
      need(1);
      ++pos_;
    }
  }

 private:
  const std::vector<uint8_t>& b_;
  size_t limit_;
  size_t pos_ = 0;
};

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

Activation activation_from_name(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "softmax") return Activation::kSoftmax;
  throw ModelIoError(ModelIoStatus::kParseError, "unknown activation: " + s);
}

nlohmann::json layer_to_json(const LayerSpec& layer) {
  nlohmann::json j;
  if (auto* c = std::get_if<Conv2DSpec>(&layer)) {
    j["type"] = "conv2d";
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["padding"] = c->padding == Padding::kSame ? "same" : "valid";
    j["activation"] = activation_name(c->activation);
  } else if (auto* p = std::get_if<MaxPool2DSpec>(&layer)) {
    j["type"] = "maxpool2d";
    j["pool"] = p->pool;
    j["stride"] = p->stride;
  } else if (std::holds_alternative<FlattenSpec>(layer)) {
    j["type"] = "flatten";
  } else {
    const auto& d = std::get<DenseSpec>(layer);
    j["type"] = "dense";
    j["in_features"] = d.in_features;
    j["out_features"] = d.out_features;
    j["activation"] = activation_name(d.activation);
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type");
  if (type == "conv2d") {
    Conv2DSpec c;
    c.in_channels = j.at("in_channels");
    c.out_channels = j.at("out_channels");
    c.kernel = j.at("kernel");
    c.stride = j.value("stride", 1);
    const std::string pad = j.value("padding", "same");
    if (pad != "same" && pad != "valid")
      throw ModelIoError(ModelIoStatus::kParseError, "unknown padding: " + pad);
    c.padding = pad == "same" ? Padding::kSame : Padding::kValid;
    c.activation = activation_from_name(j.value("activation", "none"));
    return c;
  }
  if (type == "maxpool2d") {
    MaxPool2DSpec p;
    p.pool = j.at("pool");
    p.stride = j.value("stride", p.pool);
    return p;
  }
  if (type == "flatten") return FlattenSpec{};
  if (type == "dense") {
    DenseSpec d;
    d.in_features = j.at("in_features");
    d.out_features = j.at("out_features");
    d.activation = activation_from_name(j.value("activation", "none"));
    return d;
  }
  throw ModelIoError(ModelIoStatus::kParseError, "unknown layer type: " + type);
}

void put_tensor_header(std::vector<uint8_t>& buf, Dtype dt, const std::vector<int>& shape,
                       bool with_params, float scale, int32_t zero_point) {
  buf.push_back(static_cast<uint8_t>(dt));
  buf.push_back(static_cast<uint8_t>(shape.size()));
  for (int d : shape) put_u32(buf, static_cast<uint32_t>(d));
  if (with_params) {
    put_f32(buf, scale);
    put_u32(buf, static_cast<uint32_t>(zero_point));
  }
  pad4(buf);
}

void put_header(std::vector<uint8_t>& buf, bool quantized, const nlohmann::json& arch) {
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u16(buf, kVersion);
  buf.push_back(quantized ? 1 : 0);
  const std::string js = arch.dump();
  put_u32(buf, static_cast<uint32_t>(js.size()));
  buf.insert(buf.end(), js.begin(), js.end());
}

}  // namespace

nlohmann::json arch_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["input_shape"] = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& layer : spec.layers) j["layers"].push_back(layer_to_json(layer));
  return j;
}

ModelSpec model_from_arch_json(const nlohmann::json& j) {
  ModelSpec spec;
  try {
    const auto& in = j.at("input_shape");
    if (in.size() != 3)
      throw ModelIoError(ModelIoStatus::kParseError, "input_shape must have 3 entries");
    spec.input_shape = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
    for (const auto& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(ModelIoStatus::kParseError, std::string("bad architecture JSON: ") + e.what());
  }
  try {
    infer_shapes(spec);
  } catch (const std::invalid_argument& e) {
    throw ModelIoError(ModelIoStatus::kParseError, std::string("invalid architecture: ") + e.what());
  }
  return spec;
}

ModelSpec load_arch_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(ModelIoStatus::kParseError, std::string("bad JSON in ") + path + ": " + e.what());
  }
  return model_from_arch_json(j);
}

std::vector<uint8_t> serialize_model(const ModelSpec& spec) {
  validate_model(spec);
  if (!spec.has_weights())
    throw std::invalid_argument("serialize_model: model has no weights");

  std::vector<uint8_t> buf;
  put_header(buf, /*quantized=*/false, arch_to_json(spec));
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerWeights& w = spec.weights[i];
    if (w.kernel.empty()) continue;
    for (const Tensor* t : {&w.kernel, &w.bias}) {
      put_tensor_header(buf, Dtype::kF32, t->shape, false, 0.0f, 0);
      for (float v : t->data) put_f32(buf, v);
      pad4(buf);
    }
  }
  put_u32(buf, crc32(buf.data(), buf.size()));
  return buf;
}

std::vector<uint8_t> serialize_model(const QuantizedModel& qm) {
  nlohmann::json arch;
  arch["input_shape"] = {qm.input_shape[0], qm.input_shape[1], qm.input_shape[2]};
  arch["layers"] = nlohmann::json::array();
  for (const LayerSpec& layer : qm.layers) arch["layers"].push_back(layer_to_json(layer));

  nlohmann::json q;
  q["input"] = {{"scale", static_cast<double>(qm.input_params.scale)},
                {"zero_point", qm.input_params.zero_point}};
  q["layers"] = nlohmann::json::array();
  for (const QuantLayer& ql : qm.qlayers) {
    if (ql.weights.data.empty()) {
      q["layers"].push_back(nlohmann::json::object());
    } else {
      q["layers"].push_back(
          {{"output",
            {{"scale", static_cast<double>(ql.out_params.scale)},
             {"zero_point", ql.out_params.zero_point}}},
           {"multiplier", ql.multiplier},
           {"shift", ql.shift}});
    }
  }
  arch["quantization"] = q;

  std::vector<uint8_t> buf;
  put_header(buf, /*quantized=*/true, arch);
  for (size_t i = 0; i < qm.qlayers.size(); ++i) {
    const QuantLayer& ql = qm.qlayers[i];
    if (ql.weights.data.empty()) continue;
    put_tensor_header(buf, Dtype::kI8, ql.weights.shape, true, ql.weights.params.scale,
                      ql.weights.params.zero_point);
    buf.insert(buf.end(), ql.weights.data.begin(), ql.weights.data.end());
    pad4(buf);
    const float bias_scale = ql.in_params.scale * ql.weights.params.scale;
    put_tensor_header(buf, Dtype::kI32, {static_cast<int>(ql.bias.size())}, true,
                      bias_scale, 0);
    for (int32_t v : ql.bias) put_u32(buf, static_cast<uint32_t>(v));
    pad4(buf);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));
  return buf;
}

namespace {

void write_file(const std::vector<uint8_t>& buf, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct RawTensor {
  Dtype dtype;
  std::vector<int> shape;
  float scale = 1.0f;
  int32_t zero_point = 0;
  std::vector<float> f32;
  std::vector<int8_t> i8;
  std::vector<int32_t> i32;
};

RawTensor read_tensor(Reader& r, bool quantized) {
  RawTensor t;
  const uint8_t dt = r.u8();
  if (dt > 2) throw ModelIoError(ModelIoStatus::kParseError, "bad tensor dtype");
  t.dtype = static_cast<Dtype>(dt);
  const uint8_t rank = r.u8();
  if (rank < 1 || rank > 4) throw ModelIoError(ModelIoStatus::kParseError, "bad tensor rank");
  int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    const uint32_t d = r.u32();
    if (d == 0 || d > (1u << 24)) throw ModelIoError(ModelIoStatus::kParseError, "bad tensor dim");
    t.shape.push_back(static_cast<int>(d));
    n *= d;
  }
  if (quantized) {
    t.scale = r.f32();
    t.zero_point = r.i32();
  }
  r.align4();
  if (t.dtype == Dtype::kF32) {
    t.f32.resize(static_cast<size_t>(n));
    for (auto& v : t.f32) v = r.f32();
  } else if (t.dtype == Dtype::kI8) {
    t.i8.resize(static_cast<size_t>(n));
    r.bytes(t.i8.data(), static_cast<size_t>(n));
  } else {
    t.i32.resize(static_cast<size_t>(n));
    for (auto& v : t.i32) v = r.i32();
  }
  r.align4();
  return t;
}

}  // namespace

LoadedModel parse_model(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ModelIoError(ModelIoStatus::kBadMagic, "bad magic");
  if (bytes.size() < 15) throw ModelIoError(ModelIoStatus::kTruncated, "truncated model file");

  // Structure is parsed first with the trailing CRC excluded from the read
  // region, so a short file reports truncation rather than a bad checksum.
  Reader body(bytes, bytes.size() - 4);
  body.skip(4);  // magic, checked above
  const uint16_t version = body.u16();
  if (version != kVersion)
    throw ModelIoError(ModelIoStatus::kVersionMismatch,
                       "unsupported version " + std::to_string(version));
  const uint8_t quantized = body.u8();

  const uint32_t json_len = body.u32();
  body.need(json_len);
  nlohmann::json arch;
  try {
    arch = nlohmann::json::parse(bytes.begin() + static_cast<long>(body.pos()),
                                 bytes.begin() + static_cast<long>(body.pos()) + json_len);
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(ModelIoStatus::kParseError, std::string("bad embedded JSON: ") + e.what());
  }
  body.skip(json_len);

  ModelSpec spec = model_from_arch_json(arch);

  auto finish = [&bytes](const Reader& r) {
    if (r.pos() != r.limit())
      throw ModelIoError(ModelIoStatus::kParseError, "trailing bytes after tensor records");
    const size_t end = bytes.size() - 4;
    const uint32_t stored = static_cast<uint32_t>(bytes[end]) |
                            static_cast<uint32_t>(bytes[end + 1]) << 8 |
                            static_cast<uint32_t>(bytes[end + 2]) << 16 |
                            static_cast<uint32_t>(bytes[end + 3]) << 24;
    if (crc32(bytes.data(), end) != stored)
      throw ModelIoError(ModelIoStatus::kChecksumMismatch, "checksum mismatch");
  };

  LoadedModel out;
  if (!quantized) {
    spec.weights.assign(spec.layers.size(), {});
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      auto [ks, bs] = weight_shapes(spec.layers[i]);
      if (ks.empty()) continue;
      RawTensor kt = read_tensor(body, false);
      RawTensor bt = read_tensor(body, false);
      if (kt.dtype != Dtype::kF32 || bt.dtype != Dtype::kF32 || kt.shape != ks || bt.shape != bs)
        throw ModelIoError(ModelIoStatus::kParseError, "tensor record does not match architecture");
      spec.weights[i].kernel = Tensor(ks, std::move(kt.f32));
      spec.weights[i].bias = Tensor(bs, std::move(bt.f32));
    }
    finish(body);
    validate_model(spec);
    out.quantized = false;
    out.float_model = std::move(spec);
    return out;
  }

  QuantizedModel qm;
  qm.input_shape = spec.input_shape;
  qm.layers = spec.layers;
  nlohmann::json q;
  try {
    q = arch.at("quantization");
    qm.input_params.scale = static_cast<float>(q.at("input").at("scale").get<double>());
    qm.input_params.zero_point = q.at("input").at("zero_point");
    if (q.at("layers").size() != spec.layers.size())
      throw ModelIoError(ModelIoStatus::kParseError, "quantization metadata layer count mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(ModelIoStatus::kParseError,
                       std::string("bad quantization metadata: ") + e.what());
  }

  qm.qlayers.resize(spec.layers.size());
  QuantParams act = qm.input_params;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    QuantLayer& ql = qm.qlayers[i];
    ql.in_params = act;
    auto [ks, bs] = weight_shapes(spec.layers[i]);
    if (ks.empty()) {
      ql.out_params = act;
      continue;
    }
    const nlohmann::json& lq = q["layers"][i];
    try {
      ql.out_params.scale = static_cast<float>(lq.at("output").at("scale").get<double>());
      ql.out_params.zero_point = lq.at("output").at("zero_point");
      ql.multiplier = lq.at("multiplier");
      ql.shift = lq.at("shift");
    } catch (const nlohmann::json::exception& e) {
      throw ModelIoError(ModelIoStatus::kParseError,
                         std::string("bad quantization metadata: ") + e.what());
    }
    RawTensor kt = read_tensor(body, true);
    RawTensor bt = read_tensor(body, true);
    if (kt.dtype != Dtype::kI8 || bt.dtype != Dtype::kI32 || kt.shape != ks || bt.shape != bs)
      throw ModelIoError(ModelIoStatus::kParseError, "tensor record does not match architecture");
    ql.weights.shape = std::move(kt.shape);
    ql.weights.data = std::move(kt.i8);
    ql.weights.params = {kt.scale, kt.zero_point};
    ql.bias = std::move(bt.i32);
    act = ql.out_params;
  }
  finish(body);
  out.quantized = true;
  out.quant_model = std::move(qm);
  return out;
}

void save_model(const ModelSpec& spec, const std::string& path) {
  write_file(serialize_model(spec), path);
}

void save_model(const QuantizedModel& qm, const std::string& path) {
  write_file(serialize_model(qm), path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_model(bytes);
}

FootprintReport footprint(const QuantizedModel& qm, int64_t budget_bytes) {
  FootprintReport r;
  r.model_bytes = static_cast<int64_t>(serialize_model(qm).size());
  r.budget_bytes = budget_bytes;
  r.load_cliff_bytes = kLoadCliffBytes;

  ModelSpec shape_probe;
  shape_probe.input_shape = qm.input_shape;
  shape_probe.layers = qm.layers;
  const auto shapes = infer_shapes(shape_probe);
  int64_t in_elems = shape_numel({qm.input_shape[0], qm.input_shape[1], qm.input_shape[2]});
  for (const auto& s : shapes) {
    const int64_t out_elems = shape_numel(s);
    r.estimated_scratch_bytes = std::max(r.estimated_scratch_bytes, in_elems + out_elems);
    in_elems = out_elems;
  }
  r.fits = r.model_bytes + r.estimated_scratch_bytes <= budget_bytes;
  r.model_within_load_cliff = r.model_bytes <= r.load_cliff_bytes;
  return r;
}

nlohmann::json footprint_to_json(const FootprintReport& r) {
  return {{"model_bytes", r.model_bytes},
          {"estimated_scratch_bytes", r.estimated_scratch_bytes},
          {"budget_bytes", r.budget_bytes},
          {"fits", r.fits},
          {"load_cliff_bytes", r.load_cliff_bytes},
          {"model_within_load_cliff", r.model_within_load_cliff}};
}

}  // namespace microquant
