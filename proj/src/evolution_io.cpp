#include "osteovox/evolution_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "osteovox/errors.hpp"

namespace osteovox {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 4 > bytes.size()) throw FormatError("truncated header", bytes.size());
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

EvolutionHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), kEvolutionMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kEvolutionVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  EvolutionHeader h;
  h.dims = {get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  h.n_timesteps = get_u32(bytes, 20);
  h.n_phases = get_u32(bytes, 24);
  if (h.dims.count() == 0) throw FormatError("zero grid dimension", 8);
  if (h.n_timesteps == 0) throw FormatError("no timesteps", 20);
  if (h.n_phases < 1 || h.n_phases > 256) throw FormatError("invalid phase count", 24);
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, std::size_t limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (limit > 0) {
    std::vector<std::uint8_t> head(limit);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(limit));
    head.resize(static_cast<std::size_t>(in.gcount()));
    return head;
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_evolution(const EvolutionSequence& seq) {
  if (seq.frames.empty()) throw DomainError("evolution sequence has no frames");
  const VoxelGrid& first = seq.frames.front();
  const Dims d = first.dims();
  std::vector<std::uint8_t> out;
  out.reserve(kEvolutionHeaderBytes + seq.frames.size() * d.count());
  out.insert(out.end(), kEvolutionMagic, kEvolutionMagic + 4);
  put_u32(out, kEvolutionVersion);
  put_u32(out, static_cast<std::uint32_t>(d.nx));
  put_u32(out, static_cast<std::uint32_t>(d.ny));
  put_u32(out, static_cast<std::uint32_t>(d.nz));
  put_u32(out, static_cast<std::uint32_t>(seq.frames.size()));
  put_u32(out, first.n_phases());
  for (const auto& f : seq.frames) {
    if (f.dims() != d || f.n_phases() != first.n_phases()) {
      throw ShapeError("all frames of a sequence must share dims and phase count");
    }
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return out;
}

EvolutionSequence decode_evolution(std::span<const std::uint8_t> bytes) {
  const EvolutionHeader h = decode_header(bytes);
  const std::size_t frame = h.dims.count();
  const std::size_t expected = kEvolutionHeaderBytes + frame * h.n_timesteps;
  if (bytes.size() < expected) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload", expected);

  EvolutionSequence seq;
  seq.frames.reserve(h.n_timesteps);
  for (std::uint32_t t = 0; t < h.n_timesteps; ++t) {
    const std::size_t begin = kEvolutionHeaderBytes + t * frame;
    for (std::size_t i = 0; i < frame; ++i) {
      if (bytes[begin + i] >= h.n_phases) {
        throw FormatError("label " + std::to_string(bytes[begin + i]) + " exceeds phase count",
                          begin + i);
      }
    }
    seq.frames.emplace_back(h.dims,
                            std::vector<Label>(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
                                               bytes.begin() + static_cast<std::ptrdiff_t>(begin + frame)),
                            h.n_phases);
  }
  return seq;
}

void write_evolution(const EvolutionSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_evolution(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EvolutionSequence read_evolution(const std::filesystem::path& path) {
  auto seq = decode_evolution(read_file(path));
  seq.source_id = path.stem().string();
  return seq;
}

EvolutionHeader read_evolution_header(const std::filesystem::path& path) {
  return decode_header(read_file(path, kEvolutionHeaderBytes));
}

}  // namespace osteovox
