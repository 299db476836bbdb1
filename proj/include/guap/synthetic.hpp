#pragma once

// Procedural 10-class image set in the CIFAR-10 layout, used when the real
// archive is not available. Each class is an oriented sinusoidal grating of
// class-specific orientation and frequency, drawn at low contrast over a
// smooth random background with a weaker grating of another class, a
// coloured blob and pixel noise. Every image
// is a pure function of (seed, split, index), so prefixes are stable.

#include <cstdint>
#include <filesystem>

#include "guap/backbone.hpp"

namespace guap {

struct SyntheticConfig {
  int64_t train_size = 50000;
  int64_t test_size = 10000;
  uint64_t seed = 2024;
  double amplitude_min = 0.015;  // grating half-contrast range
  double amplitude_max = 0.06;
  double pixel_noise = 0.03;  // gaussian sigma
  double distractor_ratio = 0.9;  // max amplitude of a competing grating, relative
};

LabeledDataset make_synthetic(const SyntheticConfig& cfg, Split split);

/// Writes data_batch_1..5.bin and test_batch.bin under dir.
void write_synthetic_cifar10(const std::filesystem::path& dir, const SyntheticConfig& cfg);

}  // namespace guap
