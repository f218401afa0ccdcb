#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ev4dgs/core/error.hpp"

namespace ev4dgs::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

class ByteWriter {
 public:
  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  template <class T>
  void put_span(std::span<const T> values) {
    for (const T& v : values) put(v);
  }

  void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw DataError("write failed: " + path);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes));
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw DataError("unexpected end of binary data");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <class T>
  std::vector<T> get_vector(std::size_t n) {
    if (n > remaining() / sizeof(T)) throw DataError("binary array length exceeds file size");
    std::vector<T> out(n);
    for (auto& v : out) v = get<T>();
    return out;
  }

  void expect_magic(std::string_view magic) {
    if (pos_ + magic.size() > bytes_.size() ||
        std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos_), magic.size()) != magic) {
      throw DataError("bad magic, expected " + std::string(magic));
    }
    pos_ += magic.size();
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace ev4dgs::io
