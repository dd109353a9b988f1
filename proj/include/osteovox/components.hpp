#pragma once

#include <cstdint>
#include <vector>

#include "osteovox/voxel_grid.hpp"

namespace osteovox {

enum class Connectivity { Face = 6, Full = 26 };

/// Component ids are contiguous from 1 and ordered by decreasing size
/// (ties broken by the raster position of the first voxel). Id 0 marks
/// voxels outside the target phase.
struct ComponentLabeling {
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> component_sizes;  // component_sizes[i] is the size of id i+1

  std::size_t component_count() const { return component_sizes.size(); }
};

ComponentLabeling connected_components(const VoxelGrid& grid, Label phase,
                                       Connectivity connectivity = Connectivity::Face);

/// Size of the largest component over the phase voxel count. Throws
/// DomainError when the phase is empty.
double largest_component_fraction(const VoxelGrid& grid, Label phase,
                                  Connectivity connectivity = Connectivity::Face);

}  // namespace osteovox
