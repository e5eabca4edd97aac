#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "restv2/model.hpp"

namespace restv2 {

/// Weight file layout (all integers little-endian):
///   "RSV2" | u16 version | u32 manifest bytes | manifest | f32 payload | u32 CRC32
/// The manifest is UTF-8 text, one tensor per line:
///   name \t f32 \t dim0,dim1,... \t byte offset into the payload
/// The CRC32 covers every byte before it.
inline constexpr std::uint16_t kWeightFormatVersion = 1;

std::string encode_weights(const NamedWeights<float>& weights);
/// Throws FormatError on bad magic, version, truncation, checksum or manifest.
NamedWeights<float> decode_weights(std::string_view bytes);

void save_weights(const NamedWeights<float>& weights, const std::string& path);
NamedWeights<float> load_weights(const std::string& path);

template <typename T>
void save_model(const Model<T>& model, const std::string& path);
/// Loads weights and checks them against cfg's parameter plan.
template <typename T>
Model<T> load_model(const ModelConfig& cfg, const std::string& path);

/// Single-tensor file: "RSVT" | u8 rank | u32 dims... | f32 payload.
std::string encode_tensor(const TensorF& t);
TensorF decode_tensor(std::string_view bytes);
void save_tensor(const TensorF& t, const std::string& path);
TensorF load_tensor(const std::string& path);

}  // namespace restv2
