#include <doctest.h>

#include <filesystem>

#include "guap/image_io.hpp"
#include "guap/io.hpp"
#include "helpers.hpp"

using namespace guap;
namespace fs = std::filesystem;

namespace {

io::Digest digest_of(const std::string& s) {
  return io::sha256({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
}

io::NamedTensors sample_container() {
  io::NamedTensors nt;
  nt.metadata = R"({"kind":"test"})";
  nt.tensors.emplace_back("a.weight", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  nt.tensors.emplace_back("b.bias", Tensor<float>({1}, {-0.5f}));
  return nt;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("sha-256 known vectors") {
    CHECK(io::to_hex(digest_of("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(io::to_hex(digest_of("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("byte reader and writer round trip") {
    io::ByteWriter w;
    w.u32(7);
    w.u64(1ull << 40);
    w.f64(-2.5);
    w.str("hello");
    const std::vector<float> fs{1.5f, -3.f};
    w.f32s(fs);
    io::ByteReader r(w.buffer(), "mem");
    CHECK(r.u32() == 7);
    CHECK(r.u64() == (1ull << 40));
    CHECK(r.f64() == -2.5);
    CHECK(r.str() == "hello");
    std::vector<float> back(2);
    r.f32s(back);
    CHECK(back == fs);
    CHECK(r.remaining() == 0);
    CHECK_THROWS_AS(r.u32(), io::TruncatedFile);
  }

  TEST_CASE("named tensor container round trip") {
    const auto dir = testing::scratch_dir("io_roundtrip");
    const auto nt = sample_container();
    io::save_named_tensors(dir / "c.ckpt", nt);
    const auto back = io::load_named_tensors(dir / "c.ckpt");
    CHECK(back.metadata == nt.metadata);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "a.weight");
    CHECK(back.tensors[0].second == nt.tensors[0].second);
    CHECK(back.tensors[1].second == nt.tensors[1].second);
  }

  TEST_CASE("container errors are typed") {
    const auto dir = testing::scratch_dir("io_errors");
    io::save_named_tensors(dir / "good.ckpt", sample_container());
    const auto bytes = io::read_file(dir / "good.ckpt");

    auto write_variant = [&](const std::string& name, std::vector<uint8_t> b) {
      io::write_file(dir / name, b);
      return dir / name;
    };
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(io::load_named_tensors(write_variant("magic.ckpt", wrong_magic)), io::BadMagic);

    auto wrong_version = bytes;
    wrong_version[8] = 99;
    CHECK_THROWS_AS(io::load_named_tensors(write_variant("version.ckpt", wrong_version)), io::VersionMismatch);

    auto flipped = bytes;
    flipped[bytes.size() - 34] ^= 0x10;  // inside the last float
    CHECK_THROWS_AS(io::load_named_tensors(write_variant("flip.ckpt", flipped)), io::DigestMismatch);

    for (size_t cut : {size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      const std::vector<uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(io::load_named_tensors(write_variant("trunc.ckpt", truncated)), io::TruncatedFile);
    }

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(io::load_named_tensors(write_variant("trail.ckpt", trailing)), io::FormatError);

    CHECK_THROWS(io::read_file(dir / "missing.ckpt"));
  }

  TEST_CASE("png round trip is exact on the 8-bit grid") {
    const auto dir = testing::scratch_dir("io_png");
    Tensor<float> img({3, 4, 5});
    for (int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png", 3);
    REQUIRE(back.has_value());
    CHECK(back->shape() == img.shape());
    for (int64_t i = 0; i < img.size(); ++i) CHECK(std::abs((*back)[i] - img[i]) <= 1e-6f);

    write_png(dir / "big.png", img, 3);
    const auto big = read_png(dir / "big.png", 3);
    REQUIRE(big.has_value());
    CHECK(big->shape() == Shape({3, 12, 15}));

    io::write_file(dir / "junk.png", std::vector<uint8_t>{1, 2, 3, 4});
    CHECK_FALSE(read_png(dir / "junk.png", 3).has_value());
  }

  TEST_CASE("bilinear resize keeps constants and shapes") {
    const Tensor<float> img({3, 10, 7}, 0.25f);
    const auto r = resize_bilinear(img, 32, 32);
    CHECK(r.shape() == Shape({3, 32, 32}));
    for (float v : r.span()) CHECK(v == doctest::Approx(0.25f));
  }
}
