#include "guap/nn/optim.hpp"

#include <cmath>

namespace guap::nn {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ContractViolation("unknown optimizer '" + s + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

template <typename T>
Optimizer<T>::Optimizer(std::vector<Parameter<T>*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  require(cfg_.learning_rate > 0.0, "learning rate must be > 0");
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Optimizer<T>::step(const Gradients<T>& grads) {
  ++t_;
  const double lr = cfg_.learning_rate;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Parameter<T>& p = *params_[k];
    const Tensor<T>* g = grads.find(p);
    if (!g) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (int64_t i = 0; i < p.value.size(); ++i) {
      double gi = static_cast<double>((*g)[i]) + cfg_.weight_decay * static_cast<double>(p.value[i]);
      if (cfg_.kind == OptimizerKind::adam) {
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        p.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
      } else {
        m[i] = static_cast<T>(cfg_.momentum * m[i] + gi);
        p.value[i] -= static_cast<T>(lr * m[i]);
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace guap::nn
