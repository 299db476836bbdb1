#include "guap/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "persistence formats assume a little-endian host");

namespace guap::io {

Digest sha256(std::span<const uint8_t> bytes) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
    throw std::runtime_error("SHA-256 computation failed");
  return d;
}

std::string to_hex(const Digest& d) {
  std::ostringstream os;
  for (uint8_t b : d) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return os.str();
}

void ByteWriter::raw(const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteReader::raw(void* p, size_t n) {
  auto s = take(n);
  std::memcpy(p, s.data(), n);
}

std::span<const uint8_t> ByteReader::take(size_t n) {
  if (remaining() < n)
    throw TruncatedFile(source_ + ": truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                        " more bytes, " + std::to_string(remaining()) + " available)");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::str() {
  const uint32_t n = u32();
  auto s = take(n);
  return {reinterpret_cast<const char*>(s.data()), s.size()};
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void seal(ByteWriter& w) {
  const Digest d = sha256(w.buffer());
  w.bytes(d);
}

void verify_seal(std::span<const uint8_t> file, size_t payload_end, const std::string& source) {
  const size_t tail = file.size() - payload_end;
  if (tail < sizeof(Digest))
    throw TruncatedFile(source + ": truncated, expected " + std::to_string(payload_end + sizeof(Digest)) +
                        " bytes, found " + std::to_string(file.size()));
  if (tail > sizeof(Digest))
    throw FormatError(source + ": " + std::to_string(tail - sizeof(Digest)) + " unexpected trailing bytes");
  const Digest actual = sha256(file.first(payload_end));
  if (!std::equal(actual.begin(), actual.end(), file.begin() + static_cast<std::ptrdiff_t>(payload_end)))
    throw DigestMismatch(source + ": content digest mismatch (file corrupted)");
}

namespace {
constexpr char kCheckpointMagic[8] = {'G', 'U', 'A', 'P', 'C', 'K', 'P', 'T'};
}

void save_named_tensors(const std::filesystem::path& path, const NamedTensors& nt) {
  ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(nt.metadata);
  w.u32(static_cast<uint32_t>(nt.tensors.size()));
  for (const auto& [name, t] : nt.tensors) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(static_cast<uint64_t>(d));
    w.f32s(t.span());
  }
  seal(w);
  write_file(path, w.buffer());
}

NamedTensors load_named_tensors(const std::filesystem::path& path) {
  const auto file = read_file(path);
  const std::string src = path.string();
  if (file.size() < sizeof kCheckpointMagic || std::memcmp(file.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw BadMagic(src + ": not a checkpoint file");
  ByteReader r(file, src);
  r.take(sizeof kCheckpointMagic);
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch(src + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  NamedTensors nt;
  nt.metadata = r.str();
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(src + ": tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    uint64_t numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<int64_t>(r.u64()));
      numel *= static_cast<uint64_t>(shape.back());
    }
    if (numel > r.remaining() / sizeof(float))
      throw TruncatedFile(src + ": truncated inside tensor '" + name + "'");
    Tensor<float> t(shape);
    r.f32s(t.span());
    nt.tensors.emplace_back(std::move(name), std::move(t));
  }
  verify_seal(file, r.offset(), src);
  return nt;
}

}  // namespace guap::io
