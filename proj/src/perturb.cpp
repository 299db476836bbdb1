#include "guap/perturb.hpp"

#include <cmath>

namespace guap {

template <typename T>
NoiseField<T>::NoiseField(Tensor<T> data) : data_(std::move(data)) {
  require(data_.rank() == 3, "NoiseField must have shape (c,h,w), got " + shape_str(data_.shape()));
  require(all_finite(data_.span()), "NoiseField contains non-finite values");
}

namespace {

template <typename T>
void check_compose_shapes(const Tensor<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise) {
  require(x.rank() == 4, "compose: image batch must be rank 4");
  require(noise.c() == x.dim(1) && noise.h() == x.dim(2) && noise.w() == x.dim(3),
          "noise " + shape_str(noise.tensor().shape()) + " does not match images " + shape_str(x.shape()));
  require(flow.h() == x.dim(2) && flow.w() == x.dim(3),
          "flow " + shape_str(flow.tensor().shape()) + " does not match images " + shape_str(x.shape()));
}

template <typename T>
int64_t argmax_abs(const Tensor<T>& t) {
  int64_t best = 0;
  for (int64_t i = 1; i < t.size(); ++i)
    if (std::abs(t[i]) > std::abs(t[best])) best = i;
  return best;
}

}  // namespace

template <typename T>
NoiseField<T> scale_noise(const NoiseField<T>& raw_noise, T epsilon) {
  require(epsilon >= T(0) && std::isfinite(static_cast<double>(epsilon)), "epsilon must be finite and >= 0");
  const T norm = max_abs(raw_noise.tensor().span());
  if (epsilon == T(0) || norm <= static_cast<T>(kDegenerateNoiseNorm))
    return NoiseField<T>::zeros(raw_noise.c(), raw_noise.h(), raw_noise.w());
  Tensor<T> out = raw_noise.tensor();
  const T k = epsilon / norm;
  for (auto& v : out.span()) v *= k;
  // Pin the extreme element so the l-inf norm is epsilon to the last bit.
  const int64_t top = argmax_abs(raw_noise.tensor());
  out[top] = raw_noise.tensor()[top] < 0 ? -epsilon : epsilon;
  return NoiseField<T>(std::move(out));
}

template <typename T>
NoiseField<T> scale_noise_backward(const NoiseField<T>& raw_noise, T epsilon, const NoiseField<T>& grad_scaled) {
  const auto& d0 = raw_noise.tensor();
  const T norm = max_abs(d0.span());
  Tensor<T> g(d0.shape());
  if (epsilon == T(0) || norm <= static_cast<T>(kDegenerateNoiseNorm)) return NoiseField<T>(std::move(g));
  // delta = d0 * eps / |d0_k|  =>  dd0 = (eps/M) g - (eps/M^2) <g, d0> sign(d0_k) e_k
  const T k = epsilon / norm;
  for (int64_t i = 0; i < g.size(); ++i) g[i] = k * grad_scaled.tensor()[i];
  const int64_t top = argmax_abs(d0);
  const T sign = d0[top] < 0 ? T(-1) : T(1);
  g[top] -= epsilon / (norm * norm) * dot(grad_scaled.tensor(), d0) * sign;
  return NoiseField<T>(std::move(g));
}

template <typename T>
Tensor<T> compose_adversarial(const Tensor<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise) {
  check_compose_shapes(x, flow, noise);
  Tensor<T> out = warp_tensor(x, flow);
  const int64_t per_image = noise.tensor().size();
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i] + noise.tensor()[i % per_image], T(0), T(1));
  return out;
}

template <typename T>
ImageBatch<T> compose_adversarial(const ImageBatch<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise) {
  return ImageBatch<T>(compose_adversarial(x.tensor(), flow, noise));
}

template <typename T>
ComposeGradients<T> compose_backward(const Tensor<T>& x, const FlowField<T>& flow, const NoiseField<T>& noise,
                                     const Tensor<T>& grad_out, bool want_image_grad) {
  check_compose_shapes(x, flow, noise);
  require(grad_out.shape() == x.shape(), "compose_backward: grad shape mismatch");
  const Tensor<T> warped = warp_tensor(x, flow);
  const int64_t per_image = noise.tensor().size();
  Tensor<T> masked(x.shape());
  Tensor<T> gnoise(noise.tensor().shape());
  for (int64_t i = 0; i < warped.size(); ++i) {
    const T pre = warped[i] + noise.tensor()[i % per_image];
    if (pre >= T(0) && pre <= T(1)) {
      masked[i] = grad_out[i];
      gnoise[i % per_image] += grad_out[i];
    }
  }
  auto wg = warp_backward(x, flow, masked, want_image_grad);
  return {std::move(wg.flow), NoiseField<T>(std::move(gnoise)), std::move(wg.image)};
}

#define GUAP_INSTANTIATE(T)                                                                                    \
  template class NoiseField<T>;                                                                                \
  template NoiseField<T> scale_noise(const NoiseField<T>&, T);                                                 \
  template NoiseField<T> scale_noise_backward(const NoiseField<T>&, T, const NoiseField<T>&);                  \
  template Tensor<T> compose_adversarial(const Tensor<T>&, const FlowField<T>&, const NoiseField<T>&);         \
  template ImageBatch<T> compose_adversarial(const ImageBatch<T>&, const FlowField<T>&, const NoiseField<T>&); \
  template ComposeGradients<T> compose_backward(const Tensor<T>&, const FlowField<T>&, const NoiseField<T>&,   \
                                                const Tensor<T>&, bool);

GUAP_INSTANTIATE(float)
GUAP_INSTANTIATE(double)
#undef GUAP_INSTANTIATE

}  // namespace guap
