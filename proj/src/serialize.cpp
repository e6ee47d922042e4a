#include "tabatt/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tabatt {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {
template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of stream");
  return v;
}
}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("NDT1", 4);
  write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
  for (int64_t e : t.shape()) write_pod<uint32_t>(os, static_cast<uint32_t>(e));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NDT1", 4) != 0) throw IoError("bad tensor magic");
  const uint8_t rank = read_pod<uint8_t>(is);
  if (rank < 1 || rank > kMaxRank) throw IoError("bad tensor rank");
  Shape shape(rank);
  for (uint8_t i = 0; i < rank; ++i) shape[i] = read_pod<uint32_t>(is);
  Tensor t(shape, 0.0);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw IoError("tensor payload truncated");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write("TABCKPT1", 8);
  write_pod<uint32_t>(os, static_cast<uint32_t>(params.items().size()));
  for (const auto& item : params.items()) {
    write_pod<uint16_t>(os, static_cast<uint16_t>(item.name.size()));
    os.write(item.name.data(), static_cast<std::streamsize>(item.name.size()));
    write_tensor(os, item.value);
  }
  if (!os) throw IoError("checkpoint write failed");
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "TABCKPT1", 8) != 0) throw IoError("bad checkpoint magic");
  const uint32_t count = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = read_pod<uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw IoError("checkpoint truncated");
    Tensor t = read_tensor(is);
    Tensor& dst = params.at(name);
    if (!dst.same_shape(t)) {
      throw IoError("checkpoint shape mismatch for " + name);
    }
    dst = std::move(t);
  }
}

}  // namespace tabatt
