#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "osteovox/voxel_grid.hpp"

namespace osteovox::exporter {

enum class Axis { X, Y, Z };
Axis axis_from_string(const std::string& s);

/// 8-bit grayscale image of one slice orthogonal to `axis`; mineral is 255.
struct Slice {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};
Slice slice(const VoxelGrid& grid, Axis axis, std::size_t index);

void write_png(const Slice& s, const std::filesystem::path& path);

/// Writes every slice along `axis` as slice_NNNN.png; returns the paths.
std::vector<std::filesystem::path> write_slices(const VoxelGrid& grid, Axis axis,
                                                const std::filesystem::path& dir);

/// Boundary faces of the mineral phase, two triangles per exposed voxel face,
/// with vertices shared between triangles. Faces on the grid border count as
/// exposed. Triangles wind counter-clockwise seen from outside.
struct Mesh {
  std::vector<std::array<std::uint32_t, 3>> vertices;  // lattice corners
  std::vector<std::array<std::uint32_t, 3>> triangles;
};
Mesh voxel_face_mesh(const VoxelGrid& grid);

/// Wavefront OBJ text.
std::string to_obj(const Mesh& mesh);

}  // namespace osteovox::exporter
