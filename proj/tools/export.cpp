#include "export.hpp"

#include <cstdio>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <png.h>

#include "osteovox/errors.hpp"

namespace osteovox::exporter {

Axis axis_from_string(const std::string& s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  if (s == "z") return Axis::Z;
  throw DomainError("axis must be x, y or z, got '" + s + "'");
}

namespace {

std::size_t extent(const Dims& d, Axis a) { return a == Axis::X ? d.nx : a == Axis::Y ? d.ny : d.nz; }

}  // namespace

Slice slice(const VoxelGrid& grid, Axis axis, std::size_t index) {
  const Dims d = grid.dims();
  if (index >= extent(d, axis)) throw DomainError("slice index out of range");
  Slice s;
  s.width = axis == Axis::X ? d.ny : d.nx;
  s.height = axis == Axis::Z ? d.ny : d.nz;
  s.pixels.resize(s.width * s.height);
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      Label l = 0;
      switch (axis) {
        case Axis::X: l = grid.at(index, c, r); break;
        case Axis::Y: l = grid.at(c, index, r); break;
        case Axis::Z: l = grid.at(c, r, index); break;
      }
      s.pixels[r * s.width + c] = l == kMineral ? 255 : 0;
    }
  }
  return s;
}

void write_png(const Slice& s, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < s.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(s.pixels.data() + r * s.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::filesystem::path> write_slices(const VoxelGrid& grid, Axis axis, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  const std::size_t n = extent(grid.dims(), axis);
  for (std::size_t k = 0; k < n; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%04zu.png", k);
    out.push_back(dir / name);
    write_png(slice(grid, axis, k), out.back());
  }
  return out;
}

Mesh voxel_face_mesh(const VoxelGrid& grid) {
  Mesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> index;
  auto vertex = [&](std::array<std::uint32_t, 3> p) {
    const std::uint64_t key = (std::uint64_t(p[0]) << 42) | (std::uint64_t(p[1]) << 21) | p[2];
    auto [it, fresh] = index.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (fresh) mesh.vertices.push_back(p);
    return it->second;
  };
  const Dims d = grid.dims();
  const std::array<std::size_t, 3> n{d.nx, d.ny, d.nz};
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        if (grid.at(x, y, z) != kMineral) continue;
        const std::array<std::size_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          for (int dir : {-1, 1}) {
            auto q = p;
            const bool inside = dir > 0 ? p[a] + 1 < n[a] : p[a] > 0;
            if (inside) {
              q[a] = dir > 0 ? p[a] + 1 : p[a] - 1;
              if (grid.at(q[0], q[1], q[2]) == kMineral) continue;
            }
            // Corners base, +u, +u+v, +v wind counter-clockwise around +a.
            const int u = (a + 1) % 3, v = (a + 2) % 3;
            std::array<std::uint32_t, 3> base{std::uint32_t(x), std::uint32_t(y), std::uint32_t(z)};
            if (dir > 0) ++base[a];
            std::array<std::array<std::uint32_t, 3>, 4> c{base, base, base, base};
            ++c[1][u];
            ++c[2][u];
            ++c[2][v];
            ++c[3][v];
            std::array<std::uint32_t, 4> id{vertex(c[0]), vertex(c[1]), vertex(c[2]), vertex(c[3])};
            if (dir < 0) std::swap(id[1], id[3]);
            mesh.triangles.push_back({id[0], id[1], id[2]});
            mesh.triangles.push_back({id[0], id[2], id[3]});
          }
        }
      }
    }
  }
  return mesh;
}

std::string to_obj(const Mesh& mesh) {
  std::ostringstream out;
  out << "# voxel-face surface of the mineral phase\n";
  out << "# vertices " << mesh.vertices.size() << ", triangles " << mesh.triangles.size() << "\n";
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  return out.str();
}

}  // namespace osteovox::exporter
