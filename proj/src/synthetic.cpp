#include "guap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace guap {

namespace {

constexpr int64_t kSide = 32;
constexpr int kClasses = 10;

void render(float* out, int label, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double pi = std::numbers::pi;

  // classes 0-4: five orientations at 4 cycles per image; 5-9: same at 8
  const double theta = pi * (label % 5) / 5.0 + 0.08 * (u(rng) - 0.5);
  const double freq = (label < 5 ? 4.0 : 8.0) / static_cast<double>(kSide);
  const double phase = 2 * pi * u(rng);
  const double amp = cfg.amplitude_min + (cfg.amplitude_max - cfg.amplitude_min) * u(rng);
  // weaker grating of another class competes with the true one
  const int other = (label + 1 + static_cast<int>(u(rng) * (kClasses - 1))) % kClasses;
  const double o_theta = pi * (other % 5) / 5.0 + 0.08 * (u(rng) - 0.5);
  const double o_freq = (other < 5 ? 4.0 : 8.0) / static_cast<double>(kSide);
  const double o_phase = 2 * pi * u(rng);
  const double o_amp = amp * cfg.distractor_ratio * u(rng);
  double tint[3];
  for (auto& t : tint) t = 0.6 + 0.4 * u(rng);

  double base[3], bx[3], by[3], bphase[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.3 + 0.4 * u(rng);
    bx[c] = (u(rng) - 0.5) * 2.0 / kSide;
    by[c] = (u(rng) - 0.5) * 2.0 / kSide;
    bphase[c] = 2 * pi * u(rng);
  }
  const double bg_amp = 0.15 * u(rng);

  const double cy = kSide * u(rng), cx = kSide * u(rng);
  const double radius = 3.0 + 6.0 * u(rng);
  double blob[3];
  for (auto& b : blob) b = 0.25 * (u(rng) - 0.5);

  const double ct = std::cos(theta), st = std::sin(theta);
  const double oc = std::cos(o_theta), os = std::sin(o_theta);
  for (int64_t i = 0; i < kSide; ++i)
    for (int64_t j = 0; j < kSide; ++j) {
      const double g = std::cos(2 * pi * freq * (static_cast<double>(j) * ct + static_cast<double>(i) * st) + phase);
      const double og = std::cos(2 * pi * o_freq * (static_cast<double>(j) * oc + static_cast<double>(i) * os) + o_phase);
      const double r2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (radius * radius);
      const double b = std::exp(-r2);
      for (int c = 0; c < 3; ++c) {
        const double bg = base[c] + bg_amp * std::sin(2 * pi * (bx[c] * j + by[c] * i) + bphase[c]);
        const double v = bg + blob[c] * b + amp * tint[c] * g + o_amp * og + cfg.pixel_noise * nd(rng);
        // quantise like an 8-bit source image
        out[(c * kSide + i) * kSide + j] = static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0);
      }
    }
}

}  // namespace

LabeledDataset make_synthetic(const SyntheticConfig& cfg, Split split) {
  require(cfg.amplitude_min >= 0 && cfg.amplitude_max >= cfg.amplitude_min, "synthetic amplitude range invalid");
  const int64_t n = split == Split::train ? cfg.train_size : cfg.test_size;
  require(n >= 0, "synthetic size must be non-negative");
  LabeledDataset d;
  d.split = split;
  d.images = Tensor<float>({n, 3, kSide, kSide});
  d.labels.resize(static_cast<size_t>(n));
  const uint64_t stream = split == Split::train ? 0x7261696eULL : 0x74657374ULL;
  for (int64_t k = 0; k < n; ++k) {
    std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32), static_cast<uint32_t>(stream),
                      static_cast<uint32_t>(k)};
    std::mt19937_64 rng(seq);
    const int label = static_cast<int>(std::uniform_int_distribution<int>(0, kClasses - 1)(rng));
    d.labels[k] = label;
    render(d.images.data() + k * 3 * kSide * kSide, label, cfg, rng);
  }
  return d;
}

void write_synthetic_cifar10(const std::filesystem::path& dir, const SyntheticConfig& cfg) {
  const auto train = make_synthetic(cfg, Split::train);
  const int64_t per_batch = (train.size() + 4) / 5;
  for (int b = 0; b < 5; ++b) {
    const int64_t begin = std::min(train.size(), b * per_batch);
    const int64_t count = std::min(per_batch, train.size() - begin);
    const auto part = train.slice(begin, count);
    write_cifar10_batch(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), part.images, part.labels);
  }
  const auto test = make_synthetic(cfg, Split::heldout);
  write_cifar10_batch(dir / "test_batch.bin", test.images, test.labels);
}

}  // namespace guap
