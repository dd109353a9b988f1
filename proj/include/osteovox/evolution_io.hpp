#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "osteovox/degradation.hpp"

namespace osteovox {

/// Binary evolution file, all integers little-endian:
///   "OVXE" | version u32 | nx u32 | ny u32 | nz u32 | n_timesteps u32 |
///   n_phases u32 | n_timesteps frames of nx*ny*nz u8 labels (x-fastest)
inline constexpr char kEvolutionMagic[4] = {'O', 'V', 'X', 'E'};
inline constexpr std::uint32_t kEvolutionVersion = 1;
inline constexpr std::size_t kEvolutionHeaderBytes = 28;

std::vector<std::uint8_t> encode_evolution(const EvolutionSequence& seq);
EvolutionSequence decode_evolution(std::span<const std::uint8_t> bytes);

void write_evolution(const EvolutionSequence& seq, const std::filesystem::path& path);
EvolutionSequence read_evolution(const std::filesystem::path& path);

struct EvolutionHeader {
  Dims dims;
  std::uint32_t n_timesteps = 0;
  std::uint32_t n_phases = 0;
};

/// Reads and validates only the header.
EvolutionHeader read_evolution_header(const std::filesystem::path& path);

}  // namespace osteovox
