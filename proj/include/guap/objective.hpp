#pragma once

#include <vector>

#include "guap/tensor.hpp"

namespace guap {

/// Logits (n, C) with one label per row.
template <typename T>
struct PredictionBatch {
  Tensor<T> logits;
  std::vector<int> labels;

  PredictionBatch(Tensor<T> l, std::vector<int> y);
  int64_t n() const { return logits.dim(0); }
  int64_t classes() const { return logits.dim(1); }
};

/// Negative log-softmax probability of the label, per sample.
template <typename T>
std::vector<T> cross_entropy_per_sample(const PredictionBatch<T>& pred);

/// Mean over the batch of log(ce_i + 1).
template <typename T>
T scaled_cross_entropy(const PredictionBatch<T>& pred);

enum class LossVariant { scaled_ce, plain_ce };

template <typename T>
struct LossAndGrad {
  T loss = 0;
  Tensor<T> grad_logits;
};

/// Untargeted attack loss: minus the (scaled or plain) cross-entropy of the
/// adversarial logits against the clean predictions.
template <typename T>
T adversarial_loss(const Tensor<T>& adv_logits, const std::vector<int>& clean_labels,
                   LossVariant variant = LossVariant::scaled_ce);

template <typename T>
LossAndGrad<T> adversarial_loss_with_grad(const Tensor<T>& adv_logits, const std::vector<int>& clean_labels,
                                          LossVariant variant = LossVariant::scaled_ce);

/// Mean cross-entropy and its gradient; used to fit classifiers.
template <typename T>
LossAndGrad<T> mean_cross_entropy_with_grad(const Tensor<T>& logits, const std::vector<int>& labels);

/// Row-wise argmax of (n, C) logits.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace guap
