#pragma once

// Minimal layer library with explicit backward passes. Layers are immutable
// during forward/backward: activations needed for the backward pass live on a
// caller-owned Tape and parameter gradients go to a caller-owned Gradients
// map, so a frozen model can be shared read-only.

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "guap/tensor.hpp"

namespace guap::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  int64_t fan_in = 1;
};

/// LIFO store of tensors saved by forward for the matching backward.
template <typename T>
class Tape {
 public:
  void push(Tensor<T> t) { stack_.push_back(std::move(t)); }
  Tensor<T> pop() {
    require(!stack_.empty(), "tape underflow: backward without matching forward");
    Tensor<T> t = std::move(stack_.back());
    stack_.pop_back();
    return t;
  }
  bool empty() const { return stack_.empty(); }
  void clear() { stack_.clear(); }

 private:
  std::vector<Tensor<T>> stack_;
};

/// Accumulated parameter gradients keyed by parameter identity.
template <typename T>
class Gradients {
 public:
  Tensor<T>& slot(const Parameter<T>& p) {
    auto it = grads_.find(&p);
    if (it == grads_.end()) it = grads_.emplace(&p, Tensor<T>(p.value.shape())).first;
    return it->second;
  }
  const Tensor<T>* find(const Parameter<T>& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }
  void clear() { grads_.clear(); }

 private:
  std::map<const Parameter<T>*, Tensor<T>> grads_;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  /// When tape is null nothing is recorded (inference).
  virtual Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const = 0;
  /// Returns the input gradient; accumulates parameter gradients when grads != null.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape, Gradients<T>* grads) const = 0;
  virtual void parameters(std::vector<Parameter<T>*>&) {}
  virtual void parameters(std::vector<const Parameter<T>*>&) const {}
};

struct ConvGeometry {
  int64_t kernel = 3, stride = 1, pad = 1;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int64_t in_ch, int64_t out_ch, ConvGeometry g);
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override { out.insert(out.end(), {&weight_, &bias_}); }
  void parameters(std::vector<const Parameter<T>*>& out) const override { out.insert(out.end(), {&weight_, &bias_}); }

 private:
  int64_t in_, out_;
  ConvGeometry g_;
  Parameter<T> weight_, bias_;
};

/// Transposed convolution; weight layout (in, out, k, k).
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::string name, int64_t in_ch, int64_t out_ch, ConvGeometry g, int64_t output_pad);
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override { out.insert(out.end(), {&weight_, &bias_}); }
  void parameters(std::vector<const Parameter<T>*>& out) const override { out.insert(out.end(), {&weight_, &bias_}); }

 private:
  int64_t in_, out_;
  ConvGeometry g_;
  int64_t output_pad_;
  Parameter<T> weight_, bias_;
};

/// Per-instance, per-channel normalisation over the spatial extent, with
/// learnable scale and shift.
template <typename T>
class InstanceNorm2d final : public Layer<T> {
 public:
  InstanceNorm2d(std::string name, int64_t channels, T eps = T(1e-5));
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override { out.insert(out.end(), {&gamma_, &beta_}); }
  void parameters(std::vector<const Parameter<T>*>& out) const override { out.insert(out.end(), {&gamma_, &beta_}); }

 private:
  int64_t channels_;
  T eps_;
  Parameter<T> gamma_, beta_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

template <typename T>
class Tanh final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

/// 2x2 max pooling, stride 2.
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

/// (n, c, h, w) -> (n, c)
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, int64_t in, int64_t out);
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override { out.insert(out.end(), {&weight_, &bias_}); }
  void parameters(std::vector<const Parameter<T>*>& out) const override { out.insert(out.end(), {&weight_, &bias_}); }

 private:
  int64_t in_, out_;
  Parameter<T> weight_, bias_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  Sequential& add(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }
  Sequential& add_layer(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  void parameters(std::vector<const Parameter<T>*>& out) const override;

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    parameters(out);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    parameters(out);
    return out;
  }
  size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// y = x + body(x)
template <typename T>
class Residual final : public Layer<T> {
 public:
  explicit Residual(Sequential<T> body) : body_(std::move(body)) {}
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override;
  Tensor<T> backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const override;
  void parameters(std::vector<Parameter<T>*>& out) override { body_.parameters(out); }
  void parameters(std::vector<const Parameter<T>*>& out) const override { body_.parameters(out); }

 private:
  Sequential<T> body_;
};

enum class InitScheme {
  he_uniform,      // weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero
  normal_002,      // weights N(0, 0.02), biases zero
};

/// Initialises every "*.weight" tensor per scheme, "*.bias"/"*.beta" to 0 and
/// "*.gamma" to 1.
template <typename T>
void initialize(const std::vector<Parameter<T>*>& params, InitScheme scheme, std::mt19937_64& rng);

}  // namespace guap::nn
