#pragma once

// Small shared datasets and a briefly trained classifier, built once per
// test process.

#include "guap/backbone.hpp"
#include "guap/synthetic.hpp"

namespace testing {

inline guap::SyntheticConfig tiny_synthetic_config(int64_t train = 800, int64_t test = 200) {
  guap::SyntheticConfig cfg;
  cfg.train_size = train;
  cfg.test_size = test;
  cfg.seed = 77;
  // far easier than the defaults so a few epochs on 800 images suffice
  cfg.amplitude_min = 0.12;
  cfg.amplitude_max = 0.2;
  cfg.distractor_ratio = 0.3;
  return cfg;
}

inline const guap::LabeledDataset& tiny_train() {
  static const auto d = guap::make_synthetic(tiny_synthetic_config(), guap::Split::train);
  return d;
}

inline const guap::LabeledDataset& tiny_heldout() {
  static const auto d = guap::make_synthetic(tiny_synthetic_config(), guap::Split::heldout);
  return d;
}

// convnet4 fitted for a few epochs on tiny_train(); well above chance.
inline const guap::CnnClassifier& trained_target() {
  static const guap::CnnClassifier model = [] {
    auto m = guap::build_small_cnn(guap::CnnPreset::convnet4, 5);
    guap::ClassifierHyper hyper;
    hyper.epochs = 3;
    hyper.batch_size = 32;
    hyper.seed = 6;
    guap::train_classifier(m, tiny_train(), hyper);
    return m;
  }();
  return model;
}

}  // namespace testing
