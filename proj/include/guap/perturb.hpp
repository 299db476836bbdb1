#pragma once

#include "guap/flowwarp.hpp"

namespace guap {

/// Additive perturbation of shape (c, h, w), shared by every image.
template <typename T>
class NoiseField {
 public:
  NoiseField() = default;
  explicit NoiseField(Tensor<T> data);
  static NoiseField zeros(int64_t c, int64_t h, int64_t w) { return NoiseField(Tensor<T>({c, h, w})); }

  const Tensor<T>& tensor() const { return data_; }
  int64_t c() const { return data_.dim(0); }
  int64_t h() const { return data_.dim(1); }
  int64_t w() const { return data_.dim(2); }

  friend bool operator==(const NoiseField& a, const NoiseField& b) { return a.data_ == b.data_; }

 private:
  Tensor<T> data_;
};

struct AttackBudget {
  double epsilon = 0.0;  // l-inf radius on the [0,1] intensity scale
  double tau = 0.0;      // flow budget in pixels

  AttackBudget() = default;
  AttackBudget(double eps, double t) : epsilon(eps), tau(t) {
    require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must be in [0,1]");
    require(tau >= 0.0, "tau must be >= 0");
  }
  bool is_identity() const { return epsilon == 0.0 && tau == 0.0; }
};

inline constexpr double kDegenerateNoiseNorm = 1e-12;

/// delta0 * epsilon / ||delta0||_inf, or zeros when epsilon is 0 or delta0 ~ 0.
template <typename T>
NoiseField<T> scale_noise(const NoiseField<T>& raw_noise, T epsilon);

template <typename T>
NoiseField<T> scale_noise_backward(const NoiseField<T>& raw_noise, T epsilon, const NoiseField<T>& grad_scaled);

/// Clip(warp(x, flow) + noise, 0, 1). Accepts any rank-4 tensor so callers can
/// compose onto unvalidated batches; the typed overload validates x.
template <typename T>
Tensor<T> compose_adversarial(const Tensor<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise);

template <typename T>
ImageBatch<T> compose_adversarial(const ImageBatch<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise);

template <typename T>
struct ComposeGradients {
  FlowField<T> flow;
  NoiseField<T> noise;
  Tensor<T> image;  // empty unless requested
};

/// Backward pass of compose_adversarial. The clip passes gradient only where
/// the pre-clip value lay inside [0, 1].
template <typename T>
ComposeGradients<T> compose_backward(const Tensor<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise,
                                     const Tensor<T>& grad_out, bool want_image_grad = false);

}  // namespace guap
