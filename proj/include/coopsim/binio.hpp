#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopsim {

// Little-endian byte-buffer writer/reader shared by all wire and file
// formats. The build targets little-endian hosts; a static check keeps the
// memcpy fast path honest.
static_assert(std::endian::native == std::endian::little, "little-endian host required");

// Round a double through f32 wire precision. The volatile store defeats the
// gcc-11 -O3 tail mis-rounding of in-place narrowing loops.
inline double f32_round(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    size_t off = buf_.size();
    buf_.resize(off + sizeof(T));
    std::memcpy(buf_.data() + off, &v, sizeof(T));
  }
  void put_bytes(const void* p, size_t n) {
    size_t off = buf_.size();
    buf_.resize(off + n);
    std::memcpy(buf_.data() + off, p, n);
  }
  void put_magic(const char m[5]) { put_bytes(m, 4); }
  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<uint8_t>& b) : data_(b.data()), size_(b.size()) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  void expect_magic(const char m[5], const char* what) {
    char got[4];
    get_bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw std::runtime_error(std::string(what) + ": bad magic");
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ >= size_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > size_) throw std::runtime_error("truncated buffer");
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  std::streamsize n = is.tellg();
  is.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!is) throw std::runtime_error("read failed: " + path);
  return bytes;
}

}  // namespace coopsim
