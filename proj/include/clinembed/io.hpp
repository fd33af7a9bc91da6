#pragma once

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "clinembed/error.hpp"

namespace clinembed {

// Writes to "<path>.tmp.<pid>" and renames into place on commit, so a failed
// command never leaves a partial artifact behind.
class AtomicFile {
 public:
  explicit AtomicFile(std::string path)
      : path_(std::move(path)),
        temp_(path_ + ".tmp." + std::to_string(::getpid())),
        out_(temp_, std::ios::binary | std::ios::trunc) {
    if (!out_) {
      throw Error("cannot open '" + temp_ + "' for writing");
    }
  }

  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::remove(temp_.c_str());
    }
  }

  std::ofstream& stream() { return out_; }

  void commit() {
    out_.flush();
    if (!out_) {
      throw Error("write to '" + temp_ + "' failed");
    }
    out_.close();
    if (std::rename(temp_.c_str(), path_.c_str()) != 0) {
      std::remove(temp_.c_str());
      throw Error("cannot rename '" + temp_ + "' to '" + path_ + "'");
    }
    committed_ = true;
  }

 private:
  std::string path_;
  std::string temp_;
  std::ofstream out_;
  bool committed_ = false;
};

// Little-endian primitives for the binary store and checkpoint formats.
namespace bin {

inline void put_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

inline void put_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Reader that tracks the byte offset for error reporting; every short read
// raises FormatError at the offending offset.
class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  long long offset() const { return offset_; }

  void read_exact(void* dst, size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw FormatError(what_ + ": truncated file", offset_);
    }
    offset_ += static_cast<long long>(n);
  }

  uint16_t get_u16() {
    unsigned char b[2];
    read_exact(b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }

  uint32_t get_u32() {
    unsigned char b[4];
    read_exact(b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  }

  float get_f32() { return std::bit_cast<float>(get_u32()); }

  std::string get_bytes(size_t n) {
    std::string s(n, '\0');
    read_exact(s.data(), n);
    return s;
  }

  void expect_magic(const char magic[4]) {
    char buf[4];
    read_exact(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic bytes", 0);
    }
  }

  // The file must end exactly here.
  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (in_.gcount() != 0) {
      throw FormatError(what_ + ": trailing bytes", offset_);
    }
  }

  FormatError error(const std::string& message) const {
    return FormatError(what_ + ": " + message, offset_);
  }

 private:
  std::istream& in_;
  std::string what_;
  long long offset_ = 0;
};

}  // namespace bin

}  // namespace clinembed
