#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "osteovox/nn/tensor.hpp"

namespace osteovox::nn {

/// Named float tensors in the "OVXW" layout, integers little-endian:
///   "OVXW" | version u32 | count u32 | per tensor:
///   name_len u32 | name bytes | rank u32 | dims u32 x rank | f32 payload
inline constexpr char kCheckpointMagic[4] = {'O', 'V', 'X', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(std::span<const NamedArray> arrays, const std::filesystem::path& path);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

}  // namespace osteovox::nn
