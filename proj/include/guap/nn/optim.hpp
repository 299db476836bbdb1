#pragma once

#include <string>
#include <vector>

#include "guap/nn/layers.hpp"

namespace guap::nn {

enum class OptimizerKind { adam, sgd };

OptimizerKind parse_optimizer(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;  // adam
  double momentum = 0.9;                                // sgd
};

/// Adam or SGD-with-momentum over a fixed parameter list. Parameters without
/// a gradient entry are left untouched for that step.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<Parameter<T>*> params, OptimizerConfig cfg);
  void step(const Gradients<T>& grads);
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace guap::nn
