#include "guap/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace guap::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Im2ColShape {
  int64_t channels, height, width;  // image side
  int64_t out_h, out_w;             // patch grid
  ConvGeometry g;
  int64_t rows() const { return channels * g.kernel * g.kernel; }
  int64_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const Im2ColShape& s, T* col) {
  const int64_t k = s.g.kernel;
  for (int64_t c = 0; c < s.channels; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * s.cols();
        for (int64_t oh = 0; oh < s.out_h; ++oh) {
          const int64_t ih = oh * s.g.stride - s.g.pad + ki;
          T* dst = row + oh * s.out_w;
          if (ih < 0 || ih >= s.height) {
            std::fill(dst, dst + s.out_w, T(0));
            continue;
          }
          const T* src = img + (c * s.height + ih) * s.width;
          for (int64_t ow = 0; ow < s.out_w; ++ow) {
            const int64_t iw = ow * s.g.stride - s.g.pad + kj;
            dst[ow] = (iw >= 0 && iw < s.width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image (which must be
// zeroed by the caller).
template <typename T>
void col2im(const T* col, const Im2ColShape& s, T* img) {
  const int64_t k = s.g.kernel;
  for (int64_t c = 0; c < s.channels; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * s.cols();
        for (int64_t oh = 0; oh < s.out_h; ++oh) {
          const int64_t ih = oh * s.g.stride - s.g.pad + ki;
          if (ih < 0 || ih >= s.height) continue;
          T* dst = img + (c * s.height + ih) * s.width;
          const T* src = row + oh * s.out_w;
          for (int64_t ow = 0; ow < s.out_w; ++ow) {
            const int64_t iw = ow * s.g.stride - s.g.pad + kj;
            if (iw >= 0 && iw < s.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

int64_t conv_out(int64_t in, const ConvGeometry& g) { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

void check_rank4(const Shape& s, int64_t channels, const char* who) {
  require(s.size() == 4 && s[1] == channels,
          std::string(who) + ": expected (n," + std::to_string(channels) + ",h,w), got " + shape_str(s));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int64_t in_ch, int64_t out_ch, ConvGeometry g)
    : in_(in_ch),
      out_(out_ch),
      g_(g),
      weight_{name + ".weight", Tensor<T>({out_ch, in_ch, g.kernel, g.kernel}), in_ch * g.kernel * g.kernel},
      bias_{name + ".bias", Tensor<T>({out_ch}), in_ch * g.kernel * g.kernel} {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  check_rank4(x.shape(), in_, "Conv2d");
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Im2ColShape s{in_, h, w, conv_out(h, g_), conv_out(w, g_), g_};
  Tensor<T> y({n, out_, s.out_h, s.out_w});
  AlignedVector<T> col(static_cast<size_t>(s.rows() * s.cols()));
  CMapMat<T> W(weight_.value.data(), out_, s.rows());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(), out_);
  for (int64_t i = 0; i < n; ++i) {
    im2col(x.data() + i * in_ * h * w, s, col.data());
    MapMat<T> Y(y.data() + i * out_ * s.cols(), out_, s.cols());
    Y.noalias() = W * CMapMat<T>(col.data(), s.rows(), s.cols());
    Y.colwise() += b;
  }
  if (tape) tape->push(x);
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  const Tensor<T> x = tape.pop();
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Im2ColShape s{in_, h, w, conv_out(h, g_), conv_out(w, g_), g_};
  require(gy.shape() == Shape({n, out_, s.out_h, s.out_w}), "Conv2d backward: grad shape mismatch");
  Tensor<T> gx(x.shape());
  AlignedVector<T> col(static_cast<size_t>(s.rows() * s.cols()));
  AlignedVector<T> gcol(col.size());
  CMapMat<T> W(weight_.value.data(), out_, s.rows());
  for (int64_t i = 0; i < n; ++i) {
    CMapMat<T> GY(gy.data() + i * out_ * s.cols(), out_, s.cols());
    if (grads) {
      im2col(x.data() + i * in_ * h * w, s, col.data());
      MapMat<T>(grads->slot(weight_).data(), out_, s.rows()).noalias() +=
          GY * CMapMat<T>(col.data(), s.rows(), s.cols()).transpose();
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads->slot(bias_).data(), out_) += GY.rowwise().sum();
    }
    MapMat<T>(gcol.data(), s.rows(), s.cols()).noalias() = W.transpose() * GY;
    col2im(gcol.data(), s, gx.data() + i * in_ * h * w);
  }
  return gx;
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int64_t in_ch, int64_t out_ch, ConvGeometry g,
                                    int64_t output_pad)
    : in_(in_ch),
      out_(out_ch),
      g_(g),
      output_pad_(output_pad),
      weight_{name + ".weight", Tensor<T>({in_ch, out_ch, g.kernel, g.kernel}), out_ch * g.kernel * g.kernel},
      bias_{name + ".bias", Tensor<T>({out_ch}), out_ch * g.kernel * g.kernel} {
  require(output_pad >= 0 && output_pad < g.stride, "ConvTranspose2d: output_pad must be < stride");
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  check_rank4(x.shape(), in_, "ConvTranspose2d");
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t oh = (h - 1) * g_.stride - 2 * g_.pad + g_.kernel + output_pad_;
  const int64_t ow = (w - 1) * g_.stride - 2 * g_.pad + g_.kernel + output_pad_;
  // The output image plays the role of the im2col source; the input grid is the patch grid.
  const Im2ColShape s{out_, oh, ow, h, w, g_};
  Tensor<T> y({n, out_, oh, ow});
  AlignedVector<T> col(static_cast<size_t>(s.rows() * s.cols()));
  CMapMat<T> W(weight_.value.data(), in_, s.rows());
  for (int64_t i = 0; i < n; ++i) {
    MapMat<T>(col.data(), s.rows(), s.cols()).noalias() =
        W.transpose() * CMapMat<T>(x.data() + i * in_ * h * w, in_, h * w);
    T* yi = y.data() + i * out_ * oh * ow;
    col2im(col.data(), s, yi);
    for (int64_t c = 0; c < out_; ++c)
      for (int64_t p = 0; p < oh * ow; ++p) yi[c * oh * ow + p] += bias_.value[c];
  }
  if (tape) tape->push(x);
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  const Tensor<T> x = tape.pop();
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t oh = gy.dim(2), ow = gy.dim(3);
  const Im2ColShape s{out_, oh, ow, h, w, g_};
  Tensor<T> gx(x.shape());
  AlignedVector<T> gcol(static_cast<size_t>(s.rows() * s.cols()));
  CMapMat<T> W(weight_.value.data(), in_, s.rows());
  for (int64_t i = 0; i < n; ++i) {
    const T* gyi = gy.data() + i * out_ * oh * ow;
    im2col(gyi, s, gcol.data());
    CMapMat<T> GC(gcol.data(), s.rows(), s.cols());
    CMapMat<T> X(x.data() + i * in_ * h * w, in_, h * w);
    MapMat<T>(gx.data() + i * in_ * h * w, in_, h * w).noalias() = W * GC;
    if (grads) {
      MapMat<T>(grads->slot(weight_).data(), in_, s.rows()).noalias() += X * GC.transpose();
      auto& gb = grads->slot(bias_);
      for (int64_t c = 0; c < out_; ++c) {
        T acc = 0;
        for (int64_t p = 0; p < oh * ow; ++p) acc += gyi[c * oh * ow + p];
        gb[c] += acc;
      }
    }
  }
  return gx;
}

// -------------------------------------------------------- InstanceNorm2d

template <typename T>
InstanceNorm2d<T>::InstanceNorm2d(std::string name, int64_t channels, T eps)
    : channels_(channels),
      eps_(eps),
      gamma_{name + ".gamma", Tensor<T>({channels}, T(1)), 1},
      beta_{name + ".beta", Tensor<T>({channels}), 1} {}

template <typename T>
Tensor<T> InstanceNorm2d<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  check_rank4(x.shape(), channels_, "InstanceNorm2d");
  const int64_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std({n, channels_});
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < channels_; ++c) {
      const int64_t off = (i * channels_ + c) * plane;
      T mean = 0;
      for (int64_t p = 0; p < plane; ++p) mean += x[off + p];
      mean /= static_cast<T>(plane);
      T var = 0;
      for (int64_t p = 0; p < plane; ++p) var += (x[off + p] - mean) * (x[off + p] - mean);
      var /= static_cast<T>(plane);
      const T is = T(1) / std::sqrt(var + eps_);
      inv_std[i * channels_ + c] = is;
      for (int64_t p = 0; p < plane; ++p) {
        xhat[off + p] = (x[off + p] - mean) * is;
        y[off + p] = gamma_.value[c] * xhat[off + p] + beta_.value[c];
      }
    }
  }
  if (tape) {
    tape->push(std::move(xhat));
    tape->push(std::move(inv_std));
  }
  return y;
}

template <typename T>
Tensor<T> InstanceNorm2d<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  const Tensor<T> inv_std = tape.pop();
  const Tensor<T> xhat = tape.pop();
  const int64_t n = gy.dim(0), plane = gy.dim(2) * gy.dim(3);
  const T m = static_cast<T>(plane);
  Tensor<T> gx(gy.shape());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < channels_; ++c) {
      const int64_t off = (i * channels_ + c) * plane;
      T sum_g = 0, sum_gx = 0;
      for (int64_t p = 0; p < plane; ++p) {
        sum_g += gy[off + p];
        sum_gx += gy[off + p] * xhat[off + p];
      }
      if (grads) {
        grads->slot(gamma_)[c] += sum_gx;
        grads->slot(beta_)[c] += sum_g;
      }
      const T k = gamma_.value[c] * inv_std[i * channels_ + c] / m;
      for (int64_t p = 0; p < plane; ++p)
        gx[off + p] = k * (m * gy[off + p] - sum_g - xhat[off + p] * sum_gx);
    }
  }
  return gx;
}

// ----------------------------------------------------------- activations

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  Tensor<T> y = x;
  for (auto& v : y.span()) v = v > T(0) ? v : T(0);
  if (tape) tape->push(y);
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> y = tape.pop();
  Tensor<T> gx = gy;
  for (int64_t i = 0; i < gx.size(); ++i)
    if (y[i] <= T(0)) gx[i] = 0;
  return gx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  Tensor<T> y = x;
  for (auto& v : y.span()) v = T(1) / (T(1) + std::exp(-v));
  if (tape) tape->push(y);
  return y;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> y = tape.pop();
  Tensor<T> gx = gy;
  for (int64_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (T(1) - y[i]);
  return gx;
}

template <typename T>
Tensor<T> Tanh<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  Tensor<T> y = x;
  for (auto& v : y.span()) v = std::tanh(v);
  if (tape) tape->push(y);
  return y;
}

template <typename T>
Tensor<T> Tanh<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> y = tape.pop();
  Tensor<T> gx = gy;
  for (int64_t i = 0; i < gx.size(); ++i) gx[i] *= T(1) - y[i] * y[i];
  return gx;
}

// --------------------------------------------------------------- pooling

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "MaxPool2d needs even spatial dims");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), h / 2, w / 2});
  for (int64_t k = 0; k < nc; ++k) {
    const T* src = x.data() + k * h * w;
    T* dst = y.data() + k * (h / 2) * (w / 2);
    for (int64_t i = 0; i < h / 2; ++i)
      for (int64_t j = 0; j < w / 2; ++j) {
        const T* p = src + 2 * i * w + 2 * j;
        dst[i * (w / 2) + j] = std::max(std::max(p[0], p[1]), std::max(p[w], p[w + 1]));
      }
  }
  if (tape) tape->push(x);
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> x = tape.pop();
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> gx(x.shape());
  for (int64_t k = 0; k < nc; ++k) {
    const T* src = x.data() + k * h * w;
    T* dst = gx.data() + k * h * w;
    const T* g = gy.data() + k * (h / 2) * (w / 2);
    for (int64_t i = 0; i < h / 2; ++i)
      for (int64_t j = 0; j < w / 2; ++j) {
        const int64_t base = 2 * i * w + 2 * j;
        int64_t best = base;
        for (int64_t o : {base + 1, base + w, base + w + 1})
          if (src[o] > src[best]) best = o;
        dst[best] += g[i * (w / 2) + j];
      }
  }
  return gx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  require(x.rank() == 4, "GlobalAvgPool expects rank 4");
  const int64_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1)});
  for (int64_t k = 0; k < nc; ++k) {
    T s = 0;
    for (int64_t p = 0; p < plane; ++p) s += x[k * plane + p];
    y[k] = s / static_cast<T>(plane);
  }
  if (tape) tape->push(Tensor<T>({4}, std::vector<T>(x.shape().begin(), x.shape().end())));
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> dims = tape.pop();
  Shape s;
  for (T d : dims.span()) s.push_back(static_cast<int64_t>(d));
  const int64_t plane = s[2] * s[3];
  Tensor<T> gx(s);
  for (int64_t k = 0; k < s[0] * s[1]; ++k)
    for (int64_t p = 0; p < plane; ++p) gx[k * plane + p] = gy[k] / static_cast<T>(plane);
  return gx;
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  if (tape) tape->push(Tensor<T>({x.rank()}, std::vector<T>(x.shape().begin(), x.shape().end())));
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>*) const {
  const Tensor<T> dims = tape.pop();
  Shape s;
  for (T d : dims.span()) s.push_back(static_cast<int64_t>(d));
  return gy.reshaped(s);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, int64_t in, int64_t out)
    : in_(in), out_(out), weight_{name + ".weight", Tensor<T>({out, in}), in}, bias_{name + ".bias", Tensor<T>({out}), in} {}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  require(x.rank() == 2 && x.dim(1) == in_, "Linear: expected (n," + std::to_string(in_) + "), got " + shape_str(x.shape()));
  const int64_t n = x.dim(0);
  Tensor<T> y({n, out_});
  MapMat<T> Y(y.data(), n, out_);
  Y.noalias() = CMapMat<T>(x.data(), n, in_) * CMapMat<T>(weight_.value.data(), out_, in_).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
  if (tape) tape->push(x);
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  const Tensor<T> x = tape.pop();
  const int64_t n = x.dim(0);
  CMapMat<T> GY(gy.data(), n, out_);
  CMapMat<T> X(x.data(), n, in_);
  if (grads) {
    MapMat<T>(grads->slot(weight_).data(), out_, in_).noalias() += GY.transpose() * X;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads->slot(bias_).data(), out_) += GY.colwise().sum();
  }
  Tensor<T> gx(x.shape());
  MapMat<T>(gx.data(), n, in_).noalias() = GY * CMapMat<T>(weight_.value.data(), out_, in_);
  return gx;
}

// ------------------------------------------------------------ containers

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  Tensor<T> h = x;
  for (const auto& l : layers_) h = l->forward(h, tape);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  Tensor<T> g = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, tape, grads);
  return g;
}

template <typename T>
void Sequential<T>::parameters(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->parameters(out);
}

template <typename T>
void Sequential<T>::parameters(std::vector<const Parameter<T>*>& out) const {
  for (const auto& l : layers_) static_cast<const Layer<T>&>(*l).parameters(out);
}

template <typename T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x, Tape<T>* tape) const {
  Tensor<T> y = body_.forward(x, tape);
  y += x;
  return y;
}

template <typename T>
Tensor<T> Residual<T>::backward(const Tensor<T>& gy, Tape<T>& tape, Gradients<T>* grads) const {
  Tensor<T> gx = body_.backward(gy, tape, grads);
  gx += gy;
  return gx;
}

template <typename T>
void initialize(const std::vector<Parameter<T>*>& params, InitScheme scheme, std::mt19937_64& rng) {
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (Parameter<T>* p : params) {
    if (ends_with(p->name, ".gamma")) {
      p->value.fill(T(1));
    } else if (ends_with(p->name, ".weight")) {
      if (scheme == InitScheme::he_uniform) {
        const double bound = std::sqrt(6.0 / static_cast<double>(p->fan_in));
        std::uniform_real_distribution<double> d(-bound, bound);
        for (auto& v : p->value.span()) v = static_cast<T>(d(rng));
      } else {
        std::normal_distribution<double> d(0.0, 0.02);
        for (auto& v : p->value.span()) v = static_cast<T>(d(rng));
      }
    } else {
      p->value.fill(T(0));
    }
  }
}

#define GUAP_INSTANTIATE(T)                 \
  template class Conv2d<T>;                 \
  template class ConvTranspose2d<T>;        \
  template class InstanceNorm2d<T>;         \
  template class ReLU<T>;                   \
  template class Sigmoid<T>;                \
  template class Tanh<T>;                   \
  template class MaxPool2d<T>;              \
  template class GlobalAvgPool<T>;          \
  template class Flatten<T>;                \
  template class Linear<T>;                 \
  template class Sequential<T>;             \
  template class Residual<T>;               \
  template void initialize(const std::vector<Parameter<T>*>&, InitScheme, std::mt19937_64&);

GUAP_INSTANTIATE(float)
GUAP_INSTANTIATE(double)
#undef GUAP_INSTANTIATE

}  // namespace guap::nn
