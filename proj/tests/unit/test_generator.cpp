#include <doctest.h>

#include <random>

#include "guap/generator.hpp"
#include "helpers.hpp"

using namespace guap;

namespace {

GeneratorArch small_arch(int64_t width, int64_t size) {
  GeneratorArch a;
  a.base_width = width;
  a.num_resnet_blocks = 1;
  a.height = a.width = size;
  return a;
}

nn::Parameter<double>* find_param(Generator<double>& g, const std::string& name) {
  for (auto* p : g.parameters())
    if (p->name == name) return p;
  FAIL("no parameter " << name);
  return nullptr;
}

}  // namespace

TEST_SUITE("generator") {
  TEST_CASE("output shapes follow the image shape") {
    for (int64_t size : {32, 64}) {
      const auto g = init_generator<float>(small_arch(8, size), 1);
      const auto z = SeedPattern<float>::sample(3, size, size, 2);
      const auto out = generator_forward(z, g);
      CHECK(out.noise.tensor().shape() == Shape({3, size, size}));
      CHECK(out.flow.tensor().shape() == Shape({2, size, size}));
    }
  }

  TEST_CASE("outputs stay inside the activation ranges") {
    const auto g = init_generator<float>(small_arch(8, 16), 3);
    const auto out = generator_forward(SeedPattern<float>::sample(3, 16, 16, 4), g);
    for (float v : out.noise.tensor().span()) CHECK((v > -1.0f && v < 1.0f));
    for (float v : out.flow.tensor().span()) CHECK((v > -1.0f && v < 1.0f));
    auto verbatim = small_arch(8, 16);
    verbatim.verbatim_sigmoid_flow = true;
    const auto gv = init_generator<float>(verbatim, 3);
    const auto ov = generator_forward(SeedPattern<float>::sample(3, 16, 16, 4), gv);
    for (float v : ov.flow.tensor().span()) CHECK((v > 0.0f && v < 1.0f));
  }

  TEST_CASE("deterministic for a given seed") {
    const auto a = init_generator<float>(small_arch(8, 16), 11);
    const auto b = init_generator<float>(small_arch(8, 16), 11);
    const auto c = init_generator<float>(small_arch(8, 16), 12);
    CHECK(a.parameter_digest() == b.parameter_digest());
    CHECK(a.parameter_digest() != c.parameter_digest());
    const auto z = SeedPattern<float>::sample(3, 16, 16, 5);
    CHECK(z.digest() == SeedPattern<float>::sample(3, 16, 16, 5).digest());
    const auto oa = generator_forward(z, a), ob = generator_forward(z, b);
    CHECK(oa.noise == ob.noise);
    CHECK(oa.flow == ob.flow);
  }

  TEST_CASE("a zeroed flow head yields a degenerate flow") {
    auto g = init_generator<double>(small_arch(8, 16), 6);
    find_param(g, "flow.head.weight")->value.fill(0.0);
    find_param(g, "flow.head.bias")->value.fill(0.0);
    const auto out = generator_forward(SeedPattern<double>::sample(3, 16, 16, 7), g);
    CHECK(max_abs(out.flow.tensor().span()) == 0.0);
    const auto sf = scale_flow(out.flow, 0.1);
    CHECK(sf.degenerate);
    CHECK(max_abs(sf.flow.tensor().span()) == 0.0);
  }

  TEST_CASE("parameter gradients agree with central differences") {
    auto g = init_generator<double>(small_arch(8, 8), 8);
    std::mt19937_64 rng(9);
    // larger weights so activations are not all near zero
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto* p : g.parameters())
      if (p->name.ends_with(".weight"))
        for (auto& v : p->value.span()) v = u(rng);
    const auto z = SeedPattern<double>::sample(3, 8, 8, 10);
    const auto wn = testing::uniform<double>({3, 8, 8}, rng, -1, 1);
    const auto wf = testing::uniform<double>({2, 8, 8}, rng, -1, 1);
    auto loss = [&] {
      const auto o = generator_forward(z, g);
      return dot(o.noise.tensor(), wn) + dot(o.flow.tensor(), wf);
    };
    nn::Tape<double> tape;
    g.forward(z, &tape);
    nn::Gradients<double> grads;
    g.backward(NoiseField<double>(wn), FlowField<double>(wf), tape, grads);
    CHECK(tape.empty());

    for (const char* name : {"enc1.weight", "res0.conv2.weight", "flow.deconv2.weight", "noise.head.weight"}) {
      auto* p = find_param(g, name);
      const auto* analytic = grads.find(*p);
      REQUIRE(analytic != nullptr);
      // a random subset of entries keeps the check fast
      std::uniform_int_distribution<int64_t> pick(0, p->value.size() - 1);
      std::vector<double> a, n;
      for (int k = 0; k < 24; ++k) {
        const int64_t i = pick(rng);
        const double keep = p->value[i], h = 1e-6;
        p->value[i] = keep + h;
        const double up = loss();
        p->value[i] = keep - h;
        const double down = loss();
        p->value[i] = keep;
        n.push_back((up - down) / (2 * h));
        a.push_back((*analytic)[i]);
      }
      INFO(name);
      CHECK(testing::rel_error(std::span<const double>(a), std::span<const double>(n)) <= 1e-3);
    }
  }

  TEST_CASE("checkpoint round trip") {
    const auto dir = testing::scratch_dir("generator_ckpt");
    auto arch = small_arch(8, 16);
    arch.verbatim_sigmoid_flow = true;
    const auto g = init_generator<float>(arch, 13);
    save_generator(dir / "g.ckpt", g);
    const auto back = load_generator(dir / "g.ckpt");
    CHECK(back.arch() == arch);
    CHECK(back.parameter_digest() == g.parameter_digest());
    const auto z = SeedPattern<float>::sample(3, 16, 16, 1);
    CHECK(generator_forward(z, back).noise == generator_forward(z, g).noise);
    CHECK(GeneratorArch::from_json(arch.to_json()) == arch);
  }

  TEST_CASE("architecture validation") {
    auto a = small_arch(8, 16);
    a.height = 18;  // not divisible by 4
    CHECK_THROWS_AS(a.validate(), ContractViolation);
    a = small_arch(0, 16);
    CHECK_THROWS_AS(a.validate(), ContractViolation);
    const auto g = init_generator<float>(small_arch(8, 16), 1);
    CHECK_THROWS_AS(generator_forward(SeedPattern<float>::sample(3, 8, 8, 1), g), ContractViolation);
  }
}
