#pragma once

// Key/value tuple wire format:
//   u32 little-endian key length, key bytes,
//   u32 little-endian value length, value bytes
// repeated back to back with no header or padding. Persisted partitions and
// broadcast values use the same layout.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace pilotkit {

struct Tuple {
  std::string key;
  std::string value;

  bool operator==(const Tuple&) const = default;
  auto operator<=>(const Tuple&) const = default;
};

void append_tuple(std::string& out, std::string_view key, std::string_view value);
std::string encode_tuples(const std::vector<Tuple>& tuples);
// Throws ValidationError on truncated input.
std::vector<Tuple> decode_tuples(std::string_view bytes);
std::size_t count_tuples(std::string_view bytes);

// Zero-copy cursor over an encoded buffer.
class TupleReader {
 public:
  explicit TupleReader(std::string_view bytes) : bytes_(bytes) {}
  // False at the end; throws ValidationError on truncated input.
  bool next(std::string_view& key, std::string_view& value);
  std::size_t offset() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void put_u32_le(std::string& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 4);
}

inline std::uint32_t get_u32_le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 8);
}

inline std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

// Big-endian integers sort bytewise in numeric order, so they make good keys.
inline std::string be_u32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (8 * (3 - i))) & 0xff);
  return s;
}

inline std::uint32_t from_be_u32(std::string_view s) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4 && i < s.size(); ++i) {
    v = (v << 8) | static_cast<unsigned char>(s[i]);
  }
  return v;
}

inline std::string be_u64(std::uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * (7 - i))) & 0xff);
  return s;
}

inline std::uint64_t from_be_u64(std::string_view s) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8 && i < s.size(); ++i) {
    v = (v << 8) | static_cast<unsigned char>(s[i]);
  }
  return v;
}

// Raw IEEE-754 doubles in host (little-endian) order.
inline void put_f64(std::string& out, double d) {
  char b[8];
  std::memcpy(b, &d, 8);
  out.append(b, 8);
}

inline double get_f64(const char* p) {
  double d;
  std::memcpy(&d, p, 8);
  return d;
}

}  // namespace pilotkit
