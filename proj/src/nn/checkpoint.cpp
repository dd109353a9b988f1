#include "osteovox/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "osteovox/errors.hpp"

namespace osteovox::nn {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, bytes_.size());
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.values.size() != numel(a.shape)) {
      throw ShapeError("checkpoint tensor '" + a.name + "' has inconsistent shape");
    }
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : a.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.pos();
  if (r.u32("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedArray> arrays;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedArray a;
    const std::uint32_t len = r.u32("name length");
    const auto name = r.take(len, "name");
    a.name.assign(name.begin(), name.end());
    const std::uint32_t rank = r.u32("rank");
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(r.u32("dims"));
    const std::size_t n = numel(a.shape);
    const auto payload = r.take(n * 4, "payload");
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
      a.values[i] = std::bit_cast<float>(v);
    }
    arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return arrays;
}

void write_checkpoint(std::span<const NamedArray> arrays, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(arrays);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace osteovox::nn
