#pragma once

#include "osteovox/voxel_grid.hpp"

namespace osteovox {

/// Dice coefficient 2|A∩B| / (|A|+|B|) over the voxels labelled `phase`.
/// Two empty sets agree perfectly (1.0).
double dice(const VoxelGrid& a, const VoxelGrid& b, Label phase);

enum class HausdorffMode {
  Max,      // max of the two directed suprema
  Average,  // mean of the two directed mean nearest-neighbour distances
};

/// Hausdorff distance between the `phase` voxel sets, in voxel units with
/// Euclidean distance between voxel centres. Nearest-neighbour distances
/// come from an exact squared Euclidean distance transform.
double hausdorff(const VoxelGrid& a, const VoxelGrid& b, Label phase,
                 HausdorffMode mode = HausdorffMode::Max);

/// Exact squared Euclidean distance from every voxel to the nearest voxel
/// labelled `phase`. Entries are +inf when the phase is empty.
std::vector<double> squared_distance_transform(const VoxelGrid& grid, Label phase);

}  // namespace osteovox
