#ifndef CAT_CHECKPOINT_HPP
#define CAT_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cat/tensor.hpp"

namespace cat {

// Checkpoint file layout: magic "CATCKPT1", then per parameter:
//   u32 name length (little-endian), UTF-8 name, u32 rank, u32 dims,
//   raw little-endian float32 data.
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {
inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const NamedTensors& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);
  for (const auto& [name, t] : params) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * 4));
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  NamedTensors out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    std::uint32_t nlen = detail::read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw IoError("checkpoint: truncated name in " + path);
    std::uint32_t rank = detail::read_u32(is);
    Shape sh(rank);
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      sh[i] = static_cast<int>(detail::read_u32(is));
      n *= sh[i];
    }
    Tensor<float> t(sh);
    is.read(reinterpret_cast<char*>(t.data.data()), n * 4);
    if (is.gcount() != n * 4) throw IoError("checkpoint: truncated data in " + path);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace cat

#endif
