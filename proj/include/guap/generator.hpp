#pragma once

// Encoder / residual bottleneck / dual-decoder network that maps a fixed
// random pattern to a raw flow field and a raw additive noise.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "guap/io.hpp"
#include "guap/nn/layers.hpp"
#include "guap/perturb.hpp"

namespace guap {

/// Raised when training produces non-finite values.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorArch {
  int64_t in_channels = 3;
  int64_t base_width = 64;
  int64_t num_resnet_blocks = 2;
  int64_t height = 32;
  int64_t width = 32;
  /// Keep the flow head's sigmoid range (0,1) instead of remapping to (-1,1).
  bool verbatim_sigmoid_flow = false;

  void validate() const;
  std::string to_json() const;
  static GeneratorArch from_json(const std::string& text);
  friend bool operator==(const GeneratorArch&, const GeneratorArch&) = default;
};

/// Standard-normal, image-shaped generator input.
template <typename T>
struct SeedPattern {
  Tensor<T> data;  // (c, h, w)
  uint64_t seed = 0;

  static SeedPattern sample(int64_t c, int64_t h, int64_t w, uint64_t seed);
  io::Digest digest() const;
};

template <typename T>
struct GeneratorOutput {
  NoiseField<T> noise;  // raw noise in (-1, 1)
  FlowField<T> flow;    // raw flow in (-1, 1), or (0, 1) when verbatim
};

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorArch arch);

  const GeneratorArch& arch() const { return arch_; }

  /// Single-instance forward. Records activations on tape when non-null.
  GeneratorOutput<T> forward(const SeedPattern<T>& z, nn::Tape<T>* tape) const;

  /// Consumes the tape written by the matching forward.
  void backward(const NoiseField<T>& grad_noise, const FlowField<T>& grad_flow, nn::Tape<T>& tape,
                nn::Gradients<T>& grads) const;

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  io::Digest parameter_digest() const;

  template <typename U>
  Generator<U> cast() const;

 private:
  GeneratorArch arch_;
  nn::Sequential<T> trunk_;       // encoder + residual blocks
  nn::Sequential<T> flow_head_;   // deconv decoder ending in a sigmoid
  nn::Sequential<T> noise_head_;  // deconv decoder ending in a tanh
};

/// Deterministic N(0, 0.02) initialisation from seed.
template <typename T>
Generator<T> init_generator(const GeneratorArch& arch, uint64_t seed);

/// Convenience wrapper over Generator::forward without recording.
template <typename T>
GeneratorOutput<T> generator_forward(const SeedPattern<T>& z, const Generator<T>& g) {
  return g.forward(z, nullptr);
}

void save_generator(const std::filesystem::path& path, const Generator<float>& g);
Generator<float> load_generator(const std::filesystem::path& path);

}  // namespace guap
