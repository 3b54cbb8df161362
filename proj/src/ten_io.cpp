#include "convlstm/ten_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace convlstm {

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": truncated TEN1 header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_ten1(const std::string& path, const std::vector<int>& shape,
                const std::vector<float>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(path + ": cannot open for writing");
  os.write("TEN1", 4);
  put_u32le(os, static_cast<std::uint32_t>(shape.size()));
  for (int e : shape) put_u32le(os, static_cast<std::uint32_t>(e));
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(os, bits);
  }
  if (!os) throw FormatError(path + ": write failed");
}

}  // namespace

void save_ten1(const std::string& path, const TensorT<float>& t) {
  write_ten1(path, t.shape(), t.values());
}

void save_ten1(const std::string& path, const TensorT<double>& t) {
  std::vector<float> narrowed(t.values().begin(), t.values().end());
  write_ten1(path, t.shape(), narrowed);
}

TensorT<float> load_ten1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TEN1", 4) != 0) {
    throw FormatError(path + ": bad TEN1 magic");
  }
  std::uint32_t rank = get_u32le(is, path);
  if (rank < 1 || rank > 8) throw FormatError(path + ": implausible rank");
  std::vector<int> shape(rank);
  std::int64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t e = get_u32le(is, path);
    if (e < 1) throw FormatError(path + ": zero extent");
    shape[i] = static_cast<int>(e);
    count *= e;
  }
  std::vector<float> values(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    std::uint32_t bits = get_u32le(is, path);
    std::memcpy(&values[static_cast<std::size_t>(i)], &bits, 4);
  }
  return TensorT<float>(std::move(shape), std::move(values));
}

}  // namespace convlstm
