#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "guap/backbone.hpp"
#include "guap/image_io.hpp"
#include "guap/synthetic.hpp"
#include "helpers.hpp"

using namespace guap;
namespace fs = std::filesystem;

namespace {

void write_small_cifar(const fs::path& dir, int64_t per_file) {
  SyntheticConfig cfg = testing::tiny_synthetic_config(5 * per_file, per_file);
  write_synthetic_cifar10(dir, cfg);
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("synthetic data is deterministic with stable prefixes") {
    auto cfg = testing::tiny_synthetic_config(50, 20);
    const auto a = make_synthetic(cfg, Split::train);
    cfg.train_size = 30;
    const auto b = make_synthetic(cfg, Split::train);
    CHECK(a.images.shape() == Shape({50, 3, 32, 32}));
    const auto da = a.image_digests(), db = b.image_digests();
    CHECK(std::equal(db.begin(), db.end(), da.begin()));
    for (float v : a.images.span()) CHECK((v >= 0.0f && v <= 1.0f));
    std::set<int> labels(a.labels.begin(), a.labels.end());
    CHECK(labels.size() >= 8);
  }

  TEST_CASE("train and held-out splits share no image") {
    const auto tr = testing::tiny_train().image_digests();
    const auto te = testing::tiny_heldout().image_digests();
    const std::set<io::Digest> train_set(tr.begin(), tr.end());
    for (const auto& d : te) CHECK(train_set.count(d) == 0);
  }

  TEST_CASE("slice and gather") {
    const auto& d = testing::tiny_train();
    const auto s = d.slice(10, 5);
    CHECK(s.size() == 5);
    CHECK(s.labels[0] == d.labels[10]);
    const std::vector<int64_t> idx{12, 10};
    const auto g = d.gather(idx);
    CHECK(std::equal(g.span().begin(), g.span().begin() + 3072, s.images.span().begin() + 2 * 3072));
    CHECK_THROWS_AS(d.slice(d.size() - 1, 2), ContractViolation);
  }

  TEST_CASE("cifar binary ingest") {
    const auto dir = testing::scratch_dir("cifar");
    write_small_cifar(dir, 4);
    const auto [train, test] = ingest_cifar10(dir);
    CHECK(train.size() == 20);
    CHECK(test.size() == 4);
    CHECK(train.split == Split::train);
    CHECK(test.split == Split::heldout);

    // record 0 of data_batch_1: label byte then the red plane
    const auto raw = io::read_file(dir / "data_batch_1.bin");
    CHECK(raw.size() == 4 * 3073);
    CHECK(train.labels[0] == raw[0]);
    CHECK(train.images[0] == doctest::Approx(raw[1] / 255.0f));
    CHECK(train.images[1024] == doctest::Approx(raw[1 + 1024] / 255.0f));  // green plane
    CHECK(train.images[3072] == doctest::Approx(raw[3073 + 1] / 255.0f));  // record 1
  }

  TEST_CASE("cifar ingest errors name the file") {
    const auto dir = testing::scratch_dir("cifar_err");
    CHECK_THROWS_AS(ingest_cifar10(dir / "nope"), MissingDataFile);
    write_small_cifar(dir, 2);
    fs::remove(dir / "data_batch_3.bin");
    try {
      ingest_cifar10(dir);
      FAIL("expected MissingDataFile");
    } catch (const MissingDataFile& e) {
      CHECK(std::string(e.what()).find("data_batch_3.bin") != std::string::npos);
    }
    write_small_cifar(dir, 2);
    auto bytes = io::read_file(dir / "test_batch.bin");
    bytes.resize(bytes.size() - 100);
    io::write_file(dir / "test_batch.bin", bytes);
    try {
      ingest_cifar10(dir);
      FAIL("expected TruncatedFile");
    } catch (const io::TruncatedFile& e) {
      CHECK(std::string(e.what()).find("test_batch.bin") != std::string::npos);
      CHECK(std::string(e.what()).find("3073") != std::string::npos);
    }
    write_small_cifar(dir, 2);
    bytes = io::read_file(dir / "data_batch_2.bin");
    bytes[0] = 12;
    io::write_file(dir / "data_batch_2.bin", bytes);
    CHECK_THROWS_AS(ingest_cifar10(dir), DatasetError);
  }

  TEST_CASE("image folder ingest") {
    const auto dir = testing::scratch_dir("folder");
    const Tensor<float> img({3, 8, 8}, 0.5f);
    for (const char* cls : {"b_dog", "a_cat"}) {
      fs::create_directories(dir / cls);
      for (int i = 0; i < 3; ++i) write_png(dir / cls / ("img" + std::to_string(i) + ".png"), img);
    }
    std::ofstream(dir / "a_cat" / "broken.png") << "not a png";
    const auto res = ingest_image_folder(dir, 16);
    CHECK(res.class_names == std::vector<std::string>{"a_cat", "b_dog"});
    CHECK(res.data.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(res.data.images.shape() == Shape({6, 3, 16, 16}));
    CHECK(res.skipped == 1);
    CHECK(ingest_image_folder(dir, 16, 2).data.size() == 4);

    fs::create_directories(dir / "c_empty");
    CHECK_THROWS_AS(ingest_image_folder(dir, 16), DatasetError);
    CHECK_THROWS_AS(ingest_image_folder(dir / "missing", 16), MissingDataFile);
  }
}

TEST_SUITE("classifier") {
  TEST_CASE("presets build and produce logits") {
    for (auto preset : {CnnPreset::convnet4, CnnPreset::convnet6, CnnPreset::resnet_tiny}) {
      const auto m = build_small_cnn(preset, 1);
      CHECK(parse_preset(to_string(preset)) == preset);
      const auto logits = m.forward(testing::tiny_train().range(0, 3), nullptr);
      CHECK(logits.shape() == Shape({3, 10}));
      CHECK(all_finite(logits.span()));
    }
    CHECK_THROWS_AS(parse_preset("vgg16"), ContractViolation);
    const auto m = build_small_cnn(CnnPreset::convnet4, 1);
    CHECK_THROWS_AS(m.forward(Tensor<float>({1, 3, 16, 16}), nullptr), ContractViolation);
  }

  TEST_CASE("initialisation is deterministic") {
    CHECK(build_small_cnn(CnnPreset::convnet6, 3).parameter_digest() ==
          build_small_cnn(CnnPreset::convnet6, 3).parameter_digest());
    CHECK(build_small_cnn(CnnPreset::convnet6, 3).parameter_digest() !=
          build_small_cnn(CnnPreset::convnet6, 4).parameter_digest());
  }

  TEST_CASE("an untrained model is near chance") {
    const auto m = build_small_cnn(CnnPreset::convnet4, 2);
    const double acc = accuracy(m, testing::tiny_heldout());
    CHECK(acc <= 0.3);
  }

  TEST_CASE("training beats chance and the checkpoint round trips") {
    const auto& m = testing::trained_target();
    const double acc = accuracy(m, testing::tiny_heldout());
    CHECK(acc > 0.3);
    const auto dir = testing::scratch_dir("classifier_ckpt");
    save_checkpoint(dir / "m.ckpt", m);
    const auto back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.id() == m.id());
    CHECK(back.parameter_digest() == m.parameter_digest());
    CHECK(accuracy(back, testing::tiny_heldout()) == acc);

    auto bytes = io::read_file(dir / "m.ckpt");
    bytes[bytes.size() - 40] ^= 1;
    io::write_file(dir / "bad.ckpt", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), io::FormatError);
  }

  TEST_CASE("input gradient is finite and nonzero") {
    const auto& m = testing::trained_target();
    const auto x = testing::tiny_heldout().range(0, 4);
    nn::Tape<float> tape;
    const auto logits = m.forward(x, &tape);
    Tensor<float> g(logits.shape());
    for (int64_t i = 0; i < 4; ++i) g[i * 10 + (i % 10)] = 1.0f;
    const auto gx = m.input_gradient(g, tape);
    CHECK(gx.shape() == x.shape());
    CHECK(all_finite(gx.span()));
    CHECK(max_abs(gx.span()) > 0.0f);
  }

  TEST_CASE("predictions are deterministic and chunking does not matter") {
    const auto& m = testing::trained_target();
    const auto x = testing::tiny_heldout().range(0, 50);
    CHECK(m.predict(x, 7) == m.predict(x, 256));
  }
}
