#include "pilotkit/tuple_codec.hpp"

#include "pilotkit/error.hpp"

namespace pilotkit {

void append_tuple(std::string& out, std::string_view key, std::string_view value) {
  put_u32_le(out, static_cast<std::uint32_t>(key.size()));
  out.append(key);
  put_u32_le(out, static_cast<std::uint32_t>(value.size()));
  out.append(value);
}

std::string encode_tuples(const std::vector<Tuple>& tuples) {
  std::size_t size = 0;
  for (const auto& t : tuples) size += 8 + t.key.size() + t.value.size();
  std::string out;
  out.reserve(size);
  for (const auto& t : tuples) append_tuple(out, t.key, t.value);
  return out;
}

bool TupleReader::next(std::string_view& key, std::string_view& value) {
  if (pos_ == bytes_.size()) return false;
  auto take = [&](std::string_view& field) {
    if (bytes_.size() - pos_ < 4) {
      throw Error(ErrorCode::ValidationError, "truncated tuple length at offset " +
                                                  std::to_string(pos_));
    }
    const std::size_t len = get_u32_le(bytes_.data() + pos_);
    pos_ += 4;
    if (bytes_.size() - pos_ < len) {
      throw Error(ErrorCode::ValidationError, "truncated tuple body at offset " +
                                                  std::to_string(pos_));
    }
    field = bytes_.substr(pos_, len);
    pos_ += len;
  };
  take(key);
  take(value);
  return true;
}

std::vector<Tuple> decode_tuples(std::string_view bytes) {
  std::vector<Tuple> out;
  TupleReader reader(bytes);
  std::string_view k, v;
  while (reader.next(k, v)) out.push_back(Tuple{std::string(k), std::string(v)});
  return out;
}

std::size_t count_tuples(std::string_view bytes) {
  std::size_t n = 0;
  TupleReader reader(bytes);
  std::string_view k, v;
  while (reader.next(k, v)) ++n;
  return n;
}

}  // namespace pilotkit
