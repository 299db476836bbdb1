#pragma once

// Spatial transformation of images by a per-pixel flow field and the
// smoothness measures used to budget it.
//
// Flow convention: channel 0 holds the vertical displacement (rows), channel 1
// the horizontal displacement (columns), both in pixels. Output pixel (i, j)
// samples the source image at (i + du(i,j), j + dv(i,j)); the sampling
// coordinate is clamped to [0, h-1] x [0, w-1] and the same displacement is
// used for every colour channel.

#include <cstdint>

#include "guap/tensor.hpp"

namespace guap {

/// Images of shape (n, c, h, w) with every value in [0, 1].
template <typename T>
class ImageBatch {
 public:
  ImageBatch() = default;
  /// Validates shape (n >= 1, c in {1,3}, h,w >= 2) and range.
  explicit ImageBatch(Tensor<T> data);

  const Tensor<T>& tensor() const { return data_; }
  Tensor<T>&& release() && { return std::move(data_); }
  int64_t n() const { return data_.dim(0); }
  int64_t c() const { return data_.dim(1); }
  int64_t h() const { return data_.dim(2); }
  int64_t w() const { return data_.dim(3); }

 private:
  Tensor<T> data_;
};

/// Per-pixel displacement of shape (2, h, w), finite.
template <typename T>
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor<T> data);
  static FlowField zeros(int64_t h, int64_t w) { return FlowField(Tensor<T>({2, h, w})); }

  const Tensor<T>& tensor() const { return data_; }
  Tensor<T>& mutable_tensor() { return data_; }
  int64_t h() const { return data_.dim(1); }
  int64_t w() const { return data_.dim(2); }

  T du(int64_t i, int64_t j) const { return data_[i * w() + j]; }
  T dv(int64_t i, int64_t j) const { return data_[h() * w() + i * w() + j]; }

  friend bool operator==(const FlowField& a, const FlowField& b) { return a.data_ == b.data_; }

 private:
  Tensor<T> data_;
};

/// Warps any rank-4 tensor (values unrestricted). Core kernel behind bilinear_warp.
template <typename T>
Tensor<T> warp_tensor(const Tensor<T>& x, const FlowField<T>& flow);

template <typename T>
ImageBatch<T> bilinear_warp(const ImageBatch<T>& x, const FlowField<T>& flow);

template <typename T>
struct WarpGradients {
  Tensor<T> image;    // empty unless requested
  FlowField<T> flow;  // summed over batch and channels
};

/// Vector-Jacobian product of warp_tensor. Gradients vanish where the sampling
/// coordinate was clamped.
template <typename T>
WarpGradients<T> warp_backward(const Tensor<T>& x, const FlowField<T>& flow,
                               const Tensor<T>& grad_out, bool want_image_grad);

/// Max over the four Von Neumann directions of the whole-image RMS neighbour
/// flow difference. Out-of-bounds neighbours are replicate padded.
template <typename T>
T flow_budget(const FlowField<T>& flow);

/// Gradient of flow_budget (through the attaining direction; first on ties).
/// Returns zeros when the budget is zero.
template <typename T>
FlowField<T> flow_budget_gradient(const FlowField<T>& flow);

/// Total-variation style flow loss: sum over pixels and their 4-neighbours of
/// the Euclidean neighbour flow difference. Diagnostic only.
template <typename T>
T flow_tv_loss(const FlowField<T>& flow);

inline constexpr double kDegenerateFlowBudget = 1e-12;

template <typename T>
struct ScaledFlow {
  FlowField<T> flow;
  T raw_budget = 0;         // flow_budget of the unscaled input
  bool degenerate = false;  // raw budget below threshold; flow is identity
};

/// Rescales raw_flow so that its flow_budget equals tau. tau == 0 or a
/// degenerate raw flow gives the zero (identity) flow.
template <typename T>
ScaledFlow<T> scale_flow(const FlowField<T>& raw_flow, T tau);

/// Gradient of scale_flow with respect to raw_flow, given the gradient of the
/// scaled flow.
template <typename T>
FlowField<T> scale_flow_backward(const FlowField<T>& raw_flow, T tau, const FlowField<T>& grad_scaled);

}  // namespace guap
