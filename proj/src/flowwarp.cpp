#include "guap/flowwarp.hpp"

#include <array>
#include <cmath>

namespace guap {

template <typename T>
ImageBatch<T>::ImageBatch(Tensor<T> data) : data_(std::move(data)) {
  require(data_.rank() == 4, "ImageBatch must be rank 4, got " + shape_str(data_.shape()));
  require(n() >= 1, "ImageBatch needs at least one image");
  require(c() == 1 || c() == 3, "ImageBatch channels must be 1 or 3, got " + std::to_string(c()));
  require(h() >= 2 && w() >= 2, "ImageBatch spatial dims must be >= 2");
  for (T v : data_.span())
    require(v >= T(0) && v <= T(1), "ImageBatch values must be finite and in [0,1]");
}

template <typename T>
FlowField<T>::FlowField(Tensor<T> data) : data_(std::move(data)) {
  require(data_.rank() == 3 && data_.dim(0) == 2,
          "FlowField must have shape (2,h,w), got " + shape_str(data_.shape()));
  require(all_finite(data_.span()), "FlowField contains non-finite values");
}

namespace {

// Sampling geometry of one coordinate axis. lo is the lower grid index,
// frac the weight of lo+1, and inside is false when the coordinate was clamped.
template <typename T>
struct AxisSample {
  int64_t lo;
  T frac;
  bool inside;
};

template <typename T>
AxisSample<T> sample_axis(T coord, int64_t extent) {
  const T hi = static_cast<T>(extent - 1);
  bool inside = true;
  if (coord < T(0)) {
    coord = T(0);
    inside = false;
  } else if (coord > hi) {
    coord = hi;
    inside = false;
  }
  // lo <= extent-2 keeps lo+1 a valid index; frac reaches 1 on the last row.
  auto lo = std::min<int64_t>(static_cast<int64_t>(std::floor(coord)), extent - 2);
  return {lo, coord - static_cast<T>(lo), inside};
}

void check_warp_shapes(const Shape& x, const Shape& f) {
  require(x.size() == 4, "warp input must be rank 4, got " + shape_str(x));
  require(x[2] >= 2 && x[3] >= 2, "warp input spatial dims must be >= 2");
  require(f[1] == x[2] && f[2] == x[3],
          "flow " + shape_str(f) + " does not match image " + shape_str(x));
}

}  // namespace

template <typename T>
Tensor<T> warp_tensor(const Tensor<T>& x, const FlowField<T>& flow) {
  check_warp_shapes(x.shape(), flow.tensor().shape());
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(x.shape());
  const int64_t plane = h * w;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const auto su = sample_axis<T>(static_cast<T>(i) + flow.du(i, j), h);
      const auto sv = sample_axis<T>(static_cast<T>(j) + flow.dv(i, j), w);
      const T w00 = (1 - su.frac) * (1 - sv.frac), w01 = (1 - su.frac) * sv.frac;
      const T w10 = su.frac * (1 - sv.frac), w11 = su.frac * sv.frac;
      const int64_t o00 = su.lo * w + sv.lo, o10 = o00 + w;
      const int64_t dst = i * w + j;
      for (int64_t k = 0; k < n * c; ++k) {
        const T* src = x.data() + k * plane;
        out[k * plane + dst] = w00 * src[o00] + w01 * src[o00 + 1] + w10 * src[o10] + w11 * src[o10 + 1];
      }
    }
  }
  return out;
}

template <typename T>
ImageBatch<T> bilinear_warp(const ImageBatch<T>& x, const FlowField<T>& flow) {
  auto out = warp_tensor(x.tensor(), flow);
  // Convex combinations of [0,1] values can overshoot by an ulp.
  for (auto& v : out.span()) v = std::clamp(v, T(0), T(1));
  return ImageBatch<T>(std::move(out));
}

template <typename T>
WarpGradients<T> warp_backward(const Tensor<T>& x, const FlowField<T>& flow, const Tensor<T>& grad_out,
                               bool want_image_grad) {
  check_warp_shapes(x.shape(), flow.tensor().shape());
  require(grad_out.shape() == x.shape(), "warp_backward: grad shape mismatch");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t plane = h * w;
  WarpGradients<T> g;
  g.flow = FlowField<T>::zeros(h, w);
  if (want_image_grad) g.image = Tensor<T>(x.shape());
  auto& gf = g.flow.mutable_tensor();
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const auto su = sample_axis<T>(static_cast<T>(i) + flow.du(i, j), h);
      const auto sv = sample_axis<T>(static_cast<T>(j) + flow.dv(i, j), w);
      const int64_t o00 = su.lo * w + sv.lo, o10 = o00 + w;
      const int64_t dst = i * w + j;
      T gdu = 0, gdv = 0;
      for (int64_t k = 0; k < n * c; ++k) {
        const T* src = x.data() + k * plane;
        const T go = grad_out[k * plane + dst];
        const T a = src[o00], b = src[o00 + 1], cc = src[o10], d = src[o10 + 1];
        gdu += go * ((1 - sv.frac) * (cc - a) + sv.frac * (d - b));
        gdv += go * ((1 - su.frac) * (b - a) + su.frac * (d - cc));
        if (want_image_grad) {
          T* gi = g.image.data() + k * plane;
          gi[o00] += go * (1 - su.frac) * (1 - sv.frac);
          gi[o00 + 1] += go * (1 - su.frac) * sv.frac;
          gi[o10] += go * su.frac * (1 - sv.frac);
          gi[o10 + 1] += go * su.frac * sv.frac;
        }
      }
      if (su.inside) gf[dst] += gdu;
      if (sv.inside) gf[plane + dst] += gdv;
    }
  }
  return g;
}

namespace {

// Von Neumann offsets: up, down, left, right.
constexpr std::array<std::array<int, 2>, 4> kNeighbours{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

template <typename T>
std::array<T, 4> direction_sums(const FlowField<T>& f) {
  std::array<T, 4> sums{};
  const int64_t h = f.h(), w = f.w();
  for (size_t d = 0; d < 4; ++d) {
    T s = 0;
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) {
        const int64_t qi = i + kNeighbours[d][0], qj = j + kNeighbours[d][1];
        if (qi < 0 || qi >= h || qj < 0 || qj >= w) continue;  // replicate pad: zero difference
        const T du = f.du(i, j) - f.du(qi, qj), dv = f.dv(i, j) - f.dv(qi, qj);
        s += du * du + dv * dv;
      }
    }
    sums[d] = s;
  }
  return sums;
}

}  // namespace

template <typename T>
T flow_budget(const FlowField<T>& flow) {
  const auto sums = direction_sums(flow);
  const T n = static_cast<T>(flow.h() * flow.w());
  return std::sqrt(*std::max_element(sums.begin(), sums.end()) / n);
}

template <typename T>
FlowField<T> flow_budget_gradient(const FlowField<T>& flow) {
  const auto sums = direction_sums(flow);
  const auto best = static_cast<size_t>(std::max_element(sums.begin(), sums.end()) - sums.begin());
  const int64_t h = flow.h(), w = flow.w(), plane = h * w;
  auto g = FlowField<T>::zeros(h, w);
  if (sums[best] <= T(0)) return g;
  const T budget = std::sqrt(sums[best] / static_cast<T>(plane));
  // d sqrt(s/n) = ds / (2 n budget)
  const T scale = T(1) / (T(2) * static_cast<T>(plane) * budget);
  auto& gt = g.mutable_tensor();
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const int64_t qi = i + kNeighbours[best][0], qj = j + kNeighbours[best][1];
      if (qi < 0 || qi >= h || qj < 0 || qj >= w) continue;
      const int64_t p = i * w + j, q = qi * w + qj;
      const T du = flow.du(i, j) - flow.du(qi, qj), dv = flow.dv(i, j) - flow.dv(qi, qj);
      gt[p] += scale * 2 * du;
      gt[q] -= scale * 2 * du;
      gt[plane + p] += scale * 2 * dv;
      gt[plane + q] -= scale * 2 * dv;
    }
  }
  return g;
}

template <typename T>
T flow_tv_loss(const FlowField<T>& flow) {
  const int64_t h = flow.h(), w = flow.w();
  T total = 0;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      for (const auto& off : kNeighbours) {
        const int64_t qi = i + off[0], qj = j + off[1];
        if (qi < 0 || qi >= h || qj < 0 || qj >= w) continue;
        const T du = flow.du(i, j) - flow.du(qi, qj), dv = flow.dv(i, j) - flow.dv(qi, qj);
        total += std::sqrt(du * du + dv * dv);
      }
    }
  }
  return total;
}

template <typename T>
ScaledFlow<T> scale_flow(const FlowField<T>& raw_flow, T tau) {
  require(tau >= T(0) && std::isfinite(static_cast<double>(tau)), "tau must be finite and >= 0");
  ScaledFlow<T> out;
  out.raw_budget = flow_budget(raw_flow);
  out.degenerate = out.raw_budget <= static_cast<T>(kDegenerateFlowBudget);
  if (tau == T(0) || out.degenerate) {
    out.flow = FlowField<T>::zeros(raw_flow.h(), raw_flow.w());
    return out;
  }
  Tensor<T> scaled = raw_flow.tensor();
  scaled *= tau / out.raw_budget;
  out.flow = FlowField<T>(std::move(scaled));
  return out;
}

template <typename T>
FlowField<T> scale_flow_backward(const FlowField<T>& raw_flow, T tau, const FlowField<T>& grad_scaled) {
  const T budget = flow_budget(raw_flow);
  if (tau == T(0) || budget <= static_cast<T>(kDegenerateFlowBudget))
    return FlowField<T>::zeros(raw_flow.h(), raw_flow.w());
  // f = f0 * tau / L(f0)  =>  df0 = (tau/L) g - (tau/L^2) <g, f0> dL/df0
  const T k = tau / budget;
  const T proj = dot(grad_scaled.tensor(), raw_flow.tensor()) * tau / (budget * budget);
  const auto gl = flow_budget_gradient(raw_flow);
  Tensor<T> g(raw_flow.tensor().shape());
  for (int64_t i = 0; i < g.size(); ++i) g[i] = k * grad_scaled.tensor()[i] - proj * gl.tensor()[i];
  return FlowField<T>(std::move(g));
}

#define GUAP_INSTANTIATE(T)                                                                           \
  template class ImageBatch<T>;                                                                       \
  template class FlowField<T>;                                                                        \
  template Tensor<T> warp_tensor(const Tensor<T>&, const FlowField<T>&);                              \
  template ImageBatch<T> bilinear_warp(const ImageBatch<T>&, const FlowField<T>&);                    \
  template WarpGradients<T> warp_backward(const Tensor<T>&, const FlowField<T>&, const Tensor<T>&, bool); \
  template T flow_budget(const FlowField<T>&);                                                        \
  template FlowField<T> flow_budget_gradient(const FlowField<T>&);                                    \
  template T flow_tv_loss(const FlowField<T>&);                                                       \
  template ScaledFlow<T> scale_flow(const FlowField<T>&, T);                                          \
  template FlowField<T> scale_flow_backward(const FlowField<T>&, T, const FlowField<T>&);

GUAP_INSTANTIATE(float)
GUAP_INSTANTIATE(double)
#undef GUAP_INSTANTIATE

}  // namespace guap
