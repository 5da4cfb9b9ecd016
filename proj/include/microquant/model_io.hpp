#pragma once

// The TQM1 binary model container and the memory-footprint report.
//
// Layout (all integers little-endian):
//   magic "TQM1" | u16 version=1 | u8 quantized flag
//   u32 json_len | architecture JSON (layers, shapes; quantization metadata
//                  for quantized models)
//   per-tensor records in layer order (kernel then bias for each conv/dense):
//     u8 dtype (0=f32, 1=i8, 2=i32) | u8 rank | u32 dims[rank]
//     | f32 scale, i32 zero_point (quantized files only)
//     | padding to a 4-byte boundary | payload | padding to 4 bytes
//   u32 CRC32 of everything above

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microquant/netgraph.hpp"
#include "microquant/quantizer.hpp"

namespace microquant {

enum class ModelIoStatus { kBadMagic, kVersionMismatch, kTruncated, kChecksumMismatch, kParseError };

class ModelIoError : public std::runtime_error {
 public:
  ModelIoError(ModelIoStatus status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  ModelIoStatus status() const { return status_; }

 private:
  ModelIoStatus status_;
};

uint32_t crc32(const uint8_t* data, size_t len);

// Architecture JSON (no weights); also the schema of *.model.json configs.
nlohmann::json arch_to_json(const ModelSpec& spec);
ModelSpec model_from_arch_json(const nlohmann::json& j);  // weights left empty
ModelSpec load_arch_config(const std::string& path);

std::vector<uint8_t> serialize_model(const ModelSpec& spec);
std::vector<uint8_t> serialize_model(const QuantizedModel& qm);

void save_model(const ModelSpec& spec, const std::string& path);
void save_model(const QuantizedModel& qm, const std::string& path);

struct LoadedModel {
  bool quantized = false;
  ModelSpec float_model;     // valid when !quantized
  QuantizedModel quant_model;  // valid when quantized
};

LoadedModel parse_model(const std::vector<uint8_t>& bytes);
LoadedModel load_model(const std::string& path);

struct FootprintReport {
  int64_t model_bytes = 0;
  int64_t estimated_scratch_bytes = 0;  // max over layers of in+out int8 bytes
  int64_t budget_bytes = 0;
  bool fits = false;
  int64_t load_cliff_bytes = 0;  // advisory ceiling for model_bytes alone
  bool model_within_load_cliff = false;
};

// 496 KB default budget; 220 KB advisory cliff for the serialized model.
inline constexpr int64_t kDefaultBudgetBytes = 496 * 1024;
inline constexpr int64_t kLoadCliffBytes = 220 * 1024;

FootprintReport footprint(const QuantizedModel& qm,
                          int64_t budget_bytes = kDefaultBudgetBytes);

nlohmann::json footprint_to_json(const FootprintReport& r);

}  // namespace microquant
