#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "guap/flowwarp.hpp"
#include "helpers.hpp"

using namespace guap;
using testing::uniform;

namespace {

// Straight from the definition: clamp the sampling point, then weight each of
// the four surrounding grid points by (1 - |dy|)(1 - |dx|).
double oracle_pixel(const Tensor<double>& x, int64_t n, int64_t c, double su, double sv) {
  const int64_t h = x.dim(2), w = x.dim(3);
  su = std::clamp(su, 0.0, static_cast<double>(h - 1));
  sv = std::clamp(sv, 0.0, static_cast<double>(w - 1));
  const auto u0 = static_cast<int64_t>(std::floor(su)), v0 = static_cast<int64_t>(std::floor(sv));
  double acc = 0.0;
  for (int64_t qu : {u0, u0 + 1})
    for (int64_t qv : {v0, v0 + 1}) {
      if (qu >= h || qv >= w) continue;
      const double wt = (1 - std::abs(su - qu)) * (1 - std::abs(sv - qv));
      if (wt > 0) acc += wt * x.at(n, c, qu, qv);
    }
  return acc;
}

Tensor<double> oracle_warp(const Tensor<double>& x, const Tensor<double>& f) {
  const int64_t h = x.dim(2), w = x.dim(3);
  Tensor<double> out(x.shape());
  for (int64_t n = 0; n < x.dim(0); ++n)
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          out.at(n, c, i, j) = oracle_pixel(x, n, c, i + f[i * w + j], j + f[h * w + i * w + j]);
  return out;
}

// Enumerates every pixel and direction separately.
double oracle_budget(const Tensor<double>& f) {
  const int64_t h = f.dim(1), w = f.dim(2);
  const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
  double best = 0.0;
  for (int d = 0; d < 4; ++d) {
    double s = 0.0;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const int64_t qi = std::clamp<int64_t>(i + di[d], 0, h - 1), qj = std::clamp<int64_t>(j + dj[d], 0, w - 1);
        for (int ch = 0; ch < 2; ++ch) {
          const double diff = f[ch * h * w + i * w + j] - f[ch * h * w + qi * w + qj];
          s += diff * diff;
        }
      }
    best = std::max(best, std::sqrt(s / static_cast<double>(h * w)));
  }
  return best;
}

FlowField<double> random_flow(int64_t h, int64_t w, std::mt19937_64& rng, double mag = 2.0) {
  return FlowField<double>(uniform<double>({2, h, w}, rng, -mag, mag));
}

Tensor<double> grid_2x2() { return Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}); }

FlowField<double> constant_flow(int64_t h, int64_t w, double du, double dv) {
  Tensor<double> f({2, h, w});
  for (int64_t k = 0; k < h * w; ++k) {
    f[k] = du;
    f[h * w + k] = dv;
  }
  return FlowField<double>(std::move(f));
}

}  // namespace

TEST_SUITE("flowwarp") {
  TEST_CASE("zero flow leaves the image unchanged") {
    std::mt19937_64 rng(1);
    const auto x = uniform<float>({2, 3, 7, 5}, rng);
    const auto out = bilinear_warp(ImageBatch<float>(x), FlowField<float>::zeros(7, 5));
    CHECK(out.tensor() == x);
  }

  TEST_CASE("half-pixel vertical shift on the 2x2 grid") {
    const auto out = warp_tensor(grid_2x2(), constant_flow(2, 2, 0.5, 0.0));
    CHECK(out.to_vector() == std::vector<double>{2, 3, 3, 4});
  }

  TEST_CASE("one-pixel shift replicates the bottom row") {
    const auto out = warp_tensor(grid_2x2(), constant_flow(2, 2, 1.0, 0.0));
    CHECK(out.to_vector() == std::vector<double>{3, 4, 3, 4});
  }

  TEST_CASE("matches the scalar oracle on random pairs") {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = uniform<double>({2, 3, 9, 11}, rng);
      const auto f = random_flow(9, 11, rng, 4.0);
      const auto got = warp_tensor(x, f);
      const auto want = oracle_warp(x, f.tensor());
      for (int64_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("output stays within the hull of its neighbours and in [0,1]") {
    std::mt19937_64 rng(3);
    const auto x = uniform<float>({1, 1, 12, 12}, rng);
    const auto f = FlowField<float>(uniform<float>({2, 12, 12}, rng, -3, 3));
    const auto out = bilinear_warp(ImageBatch<float>(x), f).tensor();
    const float lo = *std::min_element(x.span().begin(), x.span().end());
    const float hi = *std::max_element(x.span().begin(), x.span().end());
    for (float v : out.span()) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }

  TEST_CASE("linear in the image") {
    std::mt19937_64 rng(4);
    const auto x1 = uniform<float>({1, 3, 8, 8}, rng), x2 = uniform<float>({1, 3, 8, 8}, rng);
    const auto f = FlowField<float>(uniform<float>({2, 8, 8}, rng, -2, 2));
    Tensor<float> mix(x1.shape());
    for (int64_t i = 0; i < mix.size(); ++i) mix[i] = 0.3f * x1[i] + 0.6f * x2[i];
    const auto a = warp_tensor(mix, f), b1 = warp_tensor(x1, f), b2 = warp_tensor(x2, f);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - (0.3f * b1[i] + 0.6f * b2[i])) <= 1e-5);
  }

  TEST_CASE("contract violations") {
    const Tensor<float> x({1, 3, 4, 4});
    CHECK_THROWS_AS(warp_tensor(x, FlowField<float>::zeros(4, 5)), ContractViolation);
    Tensor<float> bad({2, 4, 4});
    bad[3] = std::nanf("");
    CHECK_THROWS_AS(FlowField<float>{bad}, ContractViolation);
    CHECK_THROWS_AS(FlowField<float>(Tensor<float>({3, 4, 4})), ContractViolation);
    CHECK_THROWS_AS(ImageBatch<float>(Tensor<float>({1, 2, 4, 4})), ContractViolation);
    CHECK_THROWS_AS(ImageBatch<float>(Tensor<float>({1, 3, 4, 4}, 1.5f)), ContractViolation);
    CHECK_THROWS_AS(ImageBatch<float>(Tensor<float>({1, 3, 1, 4})), ContractViolation);
  }

  TEST_CASE("warp gradients agree with central differences") {
    std::mt19937_64 rng(11);
    auto x = uniform<double>({2, 3, 6, 7}, rng);
    // keep every sampling coordinate strictly inside and away from the grid
    Tensor<double> ft({2, 6, 7});
    std::uniform_real_distribution<double> frac(0.2, 0.8);
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 7; ++j) {
        const double tu = std::clamp<double>(i + std::floor(frac(rng) * 3 - 1.5), 0, 4) + frac(rng);
        const double tv = std::clamp<double>(j + std::floor(frac(rng) * 3 - 1.5), 0, 5) + frac(rng);
        ft[i * 7 + j] = tu - i;
        ft[42 + i * 7 + j] = tv - j;
      }
    const auto weights = uniform<double>(x.shape(), rng, -1, 1);
    auto loss = [&](const Tensor<double>& img, const Tensor<double>& flow) {
      return dot(warp_tensor(img, FlowField<double>(flow)), weights);
    };
    const auto g = warp_backward(x, FlowField<double>(ft), weights, true);
    const auto gx = testing::numeric_gradient(x, [&] { return loss(x, ft); }, 1e-3);
    const auto gf = testing::numeric_gradient(ft, [&] { return loss(x, ft); }, 1e-3);
    CHECK(testing::rel_error(g.image.span(), gx.span()) <= 1e-4);
    CHECK(testing::rel_error(g.flow.tensor().span(), gf.span()) <= 1e-4);
  }

  TEST_CASE("clamped coordinates carry no flow gradient") {
    const Tensor<double> x({1, 1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
    const auto f = constant_flow(3, 3, 5.0, -5.0);
    const auto g = warp_backward(x, f, Tensor<double>(x.shape(), 1.0), false);
    CHECK(max_abs(g.flow.tensor().span()) == 0.0);
    CHECK(g.image.empty());
  }
}

TEST_SUITE("flow metrics") {
  TEST_CASE("constant flow has zero budget and zero tv") {
    const auto f = constant_flow(5, 6, 0.7, -1.3);
    CHECK(flow_budget(f) == 0.0);
    CHECK(flow_tv_loss(f) == 0.0);
  }

  TEST_CASE("hand-computed budget on a 2x2 grid") {
    const FlowField<double> f(Tensor<double>({2, 2, 2}, {0, 0, 0, 1, 0, 0, 0, 0}));
    CHECK(flow_budget(f) == 0.5);
  }

  TEST_CASE("hand-computed tv on a 1x2 grid") {
    const FlowField<double> f(Tensor<double>({2, 1, 2}, {0, 3, 0, 4}));
    CHECK(flow_tv_loss(f) == 10.0);
  }

  TEST_CASE("budget matches the direction-enumerating oracle") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 25; ++t) {
      const auto f = random_flow(3 + t % 5, 4 + t % 3, rng);
      CHECK(std::abs(flow_budget(f) - oracle_budget(f.tensor())) <= 1e-12);
    }
  }

  TEST_CASE("translation invariance and homogeneity") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
      const auto f = random_flow(8, 8, rng);
      Tensor<double> shifted = f.tensor(), doubled = f.tensor();
      for (int64_t k = 0; k < 64; ++k) {
        shifted[k] += 1.7;
        shifted[64 + k] -= 0.4;
      }
      doubled *= 2.0;
      CHECK(std::abs(flow_budget(FlowField<double>(shifted)) - flow_budget(f)) <= 1e-12);
      CHECK(std::abs(flow_tv_loss(FlowField<double>(shifted)) - flow_tv_loss(f)) <= 1e-9);
      CHECK(std::abs(flow_budget(FlowField<double>(doubled)) - 2 * flow_budget(f)) <= 1e-12);
      CHECK(flow_tv_loss(f) >= 0.0);
    }
  }

  TEST_CASE("budget gradient agrees with central differences") {
    std::mt19937_64 rng(9);
    auto ft = uniform<double>({2, 5, 6}, rng, -1, 1);
    const auto g = flow_budget_gradient(FlowField<double>(ft));
    const auto num = testing::numeric_gradient(ft, [&] { return flow_budget(FlowField<double>(ft)); });
    CHECK(testing::rel_error(g.tensor().span(), num.span()) <= 1e-6);
  }
}

TEST_SUITE("scale_flow") {
  TEST_CASE("rescales a budget-0.5 flow to tau") {
    const FlowField<double> f0(Tensor<double>({2, 2, 2}, {0, 0, 0, 1, 0, 0, 0, 0}));
    const auto s = scale_flow(f0, 0.1);
    CHECK_FALSE(s.degenerate);
    CHECK(s.raw_budget == 0.5);
    for (int64_t i = 0; i < 8; ++i) CHECK(s.flow.tensor()[i] == doctest::Approx(0.2 * f0.tensor()[i]).epsilon(1e-15));
    CHECK(flow_budget(s.flow) == doctest::Approx(0.1).epsilon(1e-14));
  }

  TEST_CASE("tau zero gives the zero flow") {
    std::mt19937_64 rng(2);
    const auto s = scale_flow(random_flow(4, 4, rng), 0.0);
    CHECK(max_abs(s.flow.tensor().span()) == 0.0);
  }

  TEST_CASE("constant input is flagged degenerate") {
    const auto s = scale_flow(constant_flow(4, 4, 0.3, 0.3), 0.1);
    CHECK(s.degenerate);
    CHECK(max_abs(s.flow.tensor().span()) == 0.0);
  }

  TEST_CASE("post-scaling budget equals tau") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 20; ++t) {
      const FlowField<float> f(uniform<float>({2, 16, 16}, rng, -1, 1));
      const float tau = 0.05f * static_cast<float>(t + 1);
      CHECK(std::abs(flow_budget(scale_flow(f, tau).flow) - tau) <= 1e-5);
    }
  }

  TEST_CASE("scaling gradient agrees with central differences") {
    std::mt19937_64 rng(13);
    auto ft = uniform<double>({2, 5, 5}, rng, -1, 1);
    const auto weights = uniform<double>({2, 5, 5}, rng, -1, 1);
    const auto g = scale_flow_backward(FlowField<double>(ft), 0.3, FlowField<double>(weights));
    const auto num =
        testing::numeric_gradient(ft, [&] { return dot(scale_flow(FlowField<double>(ft), 0.3).flow.tensor(), weights); });
    CHECK(testing::rel_error(g.tensor().span(), num.span()) <= 1e-6);
  }
}
