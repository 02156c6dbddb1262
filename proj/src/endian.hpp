#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

namespace biphoton::le {

template <typename T>
void put(std::uint8_t* p, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    p[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template <typename T>
T get(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

// Bulk u64 array I/O in little-endian order.
inline void write_u64s(std::ostream& out, const std::vector<std::uint64_t>& values) {
  std::vector<std::uint8_t> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) put<std::uint64_t>(buf.data() + 8 * i, values[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline bool read_u64s(std::istream& in, std::vector<std::uint64_t>& values) {
  std::vector<std::uint8_t> buf(values.size() * 8);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) return false;
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = get<std::uint64_t>(buf.data() + 8 * i);
  return true;
}

}  // namespace biphoton::le
