#pragma once

// Byte-level persistence helpers: SHA-256 digests, little-endian
// readers/writers, typed format errors and the named-tensor container used
// for model checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "guap/tensor.hpp"

namespace guap::io {

using Digest = std::array<uint8_t, 32>;

Digest sha256(std::span<const uint8_t> bytes);
std::string to_hex(const Digest& d);

template <typename T>
Digest sha256_of(std::span<T> values) {
  return sha256({reinterpret_cast<const uint8_t*>(values.data()), values.size_bytes()});
}

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};
class DigestMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedFile : public FormatError {
 public:
  using FormatError::FormatError;
};

class ByteWriter {
 public:
  void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(const void* p, size_t n);
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  void str(const std::string& s);
  const std::vector<uint8_t>& buffer() const { return buf_; }
  std::vector<uint8_t>& buffer() { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const uint8_t> data, std::string source) : data_(data), source_(std::move(source)) {}
  void raw(void* p, size_t n);
  std::span<const uint8_t> take(size_t n);
  uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
  uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  void f32s(std::span<float> out) { raw(out.data(), out.size_bytes()); }
  std::string str();
  size_t offset() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const uint8_t> data_;
  std::string source_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

/// Appends the SHA-256 of everything written so far.
void seal(ByteWriter& w);
/// Called once a reader has parsed the whole payload: the remainder of the
/// file must be exactly the digest of file[0, payload_end).
void verify_seal(std::span<const uint8_t> file, size_t payload_end, const std::string& source);

struct NamedTensors {
  std::string metadata;  // JSON text
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_named_tensors(const std::filesystem::path& path, const NamedTensors& nt);
NamedTensors load_named_tensors(const std::filesystem::path& path);

}  // namespace guap::io
