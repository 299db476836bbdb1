#include "guap/objective.hpp"

#include <cmath>

namespace guap {

template <typename T>
PredictionBatch<T>::PredictionBatch(Tensor<T> l, std::vector<int> y) : logits(std::move(l)), labels(std::move(y)) {
  require(logits.rank() == 2, "logits must be (n, C), got " + shape_str(logits.shape()));
  require(static_cast<int64_t>(labels.size()) == logits.dim(0), "label count does not match logits rows");
  require(all_finite(logits.span()), "logits contain non-finite values");
  for (int y_i : labels) require(y_i >= 0 && y_i < logits.dim(1), "label out of range");
}

namespace {

// Softmax of each row plus the per-row log-sum-exp.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, std::vector<T>& lse) {
  const int64_t n = logits.dim(0), c = logits.dim(1);
  Tensor<T> p(logits.shape());
  lse.assign(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * c;
    const T m = *std::max_element(z, z + c);
    T s = 0;
    for (int64_t k = 0; k < c; ++k) s += std::exp(z[k] - m);
    lse[i] = m + std::log(s);
    for (int64_t k = 0; k < c; ++k) p[i * c + k] = std::exp(z[k] - lse[i]);
  }
  return p;
}

}  // namespace

template <typename T>
std::vector<T> cross_entropy_per_sample(const PredictionBatch<T>& pred) {
  std::vector<T> lse;
  softmax_rows(pred.logits, lse);
  std::vector<T> ce(static_cast<size_t>(pred.n()));
  for (int64_t i = 0; i < pred.n(); ++i)
    ce[i] = std::max(T(0), lse[i] - pred.logits[i * pred.classes() + pred.labels[i]]);
  return ce;
}

template <typename T>
T scaled_cross_entropy(const PredictionBatch<T>& pred) {
  T s = 0;
  for (T ce : cross_entropy_per_sample(pred)) s += std::log1p(ce);
  return s / static_cast<T>(pred.n());
}

template <typename T>
LossAndGrad<T> adversarial_loss_with_grad(const Tensor<T>& adv_logits, const std::vector<int>& clean_labels,
                                          LossVariant variant) {
  const PredictionBatch<T> pred(adv_logits, clean_labels);
  const int64_t n = pred.n(), c = pred.classes();
  std::vector<T> lse;
  Tensor<T> grad = softmax_rows(adv_logits, lse);
  T loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T ce = std::max(T(0), lse[i] - adv_logits[i * c + clean_labels[i]]);
    // d ce / dz = softmax - onehot; the scaled variant multiplies by 1/(ce+1).
    T weight = T(-1) / static_cast<T>(n);
    if (variant == LossVariant::scaled_ce) {
      loss -= std::log1p(ce);
      weight /= (ce + 1);
    } else {
      loss -= ce;
    }
    grad[i * c + clean_labels[i]] -= 1;
    for (int64_t k = 0; k < c; ++k) grad[i * c + k] *= weight;
  }
  return {loss / static_cast<T>(n), std::move(grad)};
}

template <typename T>
T adversarial_loss(const Tensor<T>& adv_logits, const std::vector<int>& clean_labels, LossVariant variant) {
  const PredictionBatch<T> pred(adv_logits, clean_labels);
  if (variant == LossVariant::scaled_ce) return -scaled_cross_entropy(pred);
  T s = 0;
  for (T ce : cross_entropy_per_sample(pred)) s += ce;
  return -s / static_cast<T>(pred.n());
}

template <typename T>
LossAndGrad<T> mean_cross_entropy_with_grad(const Tensor<T>& logits, const std::vector<int>& labels) {
  auto r = adversarial_loss_with_grad(logits, labels, LossVariant::plain_ce);
  r.loss = -r.loss;
  r.grad_logits *= T(-1);
  return r;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, "argmax_rows expects (n, C)");
  const int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * c;
    out[i] = static_cast<int>(std::max_element(z, z + c) - z);
  }
  return out;
}

#define GUAP_INSTANTIATE(T)                                                                                         \
  template struct PredictionBatch<T>;                                                                               \
  template std::vector<T> cross_entropy_per_sample(const PredictionBatch<T>&);                                      \
  template T scaled_cross_entropy(const PredictionBatch<T>&);                                                       \
  template T adversarial_loss(const Tensor<T>&, const std::vector<int>&, LossVariant);                              \
  template LossAndGrad<T> adversarial_loss_with_grad(const Tensor<T>&, const std::vector<int>&, LossVariant);       \
  template LossAndGrad<T> mean_cross_entropy_with_grad(const Tensor<T>&, const std::vector<int>&);                  \
  template std::vector<int> argmax_rows(const Tensor<T>&);

GUAP_INSTANTIATE(float)
GUAP_INSTANTIATE(double)
#undef GUAP_INSTANTIATE

}  // namespace guap
