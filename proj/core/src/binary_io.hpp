#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ensemblenet/error.hpp"

namespace enet::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path) : os_(path, std::ios::binary) {
    if (!os_) throw IoError("cannot open for writing: " + path.string());
  }

  template <typename T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { os_.write(static_cast<const char*>(data), n); }
  void finish(const std::filesystem::path& path) {
    os_.flush();
    if (!os_) throw IoError("write failed: " + path.string());
  }

 private:
  std::ofstream os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n) const {
    if (n > buf_.size() - pos_) {
      throw FormatError("truncated file: need " + std::to_string(n) + " more bytes", pos_);
    }
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace enet::detail
