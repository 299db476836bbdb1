#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "guap/evaluation.hpp"
#include "guap/trainer.hpp"
#include "helpers.hpp"

using namespace guap;

namespace {

TrainConfig quick_config(double eps, double tau) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.budget = AttackBudget(eps, tau);
  cfg.seed = 21;
  cfg.arch.base_width = 8;
  cfg.arch.num_resnet_blocks = 1;
  cfg.optimizer.learning_rate = 1e-3;
  return cfg;
}

// Emits NaN logits; used to exercise the fault path.
class NanModel final : public TargetModel {
 public:
  const std::string& id() const override { return id_; }
  int64_t num_classes() const override { return 10; }
  Shape input_shape() const override { return {3, 32, 32}; }
  Tensor<float> forward(const Tensor<float>& x, nn::Tape<float>*) const override {
    return Tensor<float>({x.dim(0), 10}, std::numeric_limits<float>::quiet_NaN());
  }
  Tensor<float> input_gradient(const Tensor<float>& g, nn::Tape<float>&) const override {
    return Tensor<float>({g.dim(0), 3, 32, 32});
  }
  io::Digest parameter_digest() const override { return {}; }

 private:
  std::string id_ = "nan";
};

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("identity budget never changes a prediction") {
    const auto data = testing::tiny_train().slice(0, 64);
    const auto res = train(data, testing::trained_target(), quick_config(0, 0), &testing::tiny_heldout());
    CHECK(res.log.final_validation_asr == 0.0);
    const auto p = freeze_perturbation(res.generator, res.deploy_z, AttackBudget(0, 0), "m");
    CHECK(p.apply(data.images) == data.images);
  }

  TEST_CASE("a short run beats the untrained generator and keeps the target frozen") {
    const auto& target = testing::trained_target();
    const auto before = target.parameter_digest();
    auto cfg = quick_config(0.06, 0.1);
    cfg.epochs = 3;
    const auto data = testing::tiny_train().slice(0, 320);
    std::vector<EpochRecord> seen;
    const auto res = train(data, target, cfg, &testing::tiny_heldout(), [&](const EpochRecord& r) { seen.push_back(r); });
    CHECK(target.parameter_digest() == before);
    CHECK(seen.size() == 3);
    CHECK(res.log.steps == 30);
    for (const auto& r : seen) CHECK(std::isfinite(r.validation_asr));

    const auto untrained = init_generator<float>(cfg.arch, 1);
    const auto p0 = freeze_perturbation(untrained, res.deploy_z, cfg.budget, target.id());
    const auto p1 = freeze_perturbation(res.generator, res.deploy_z, cfg.budget, target.id());
    const double asr0 = attack_success_rate(p0, testing::tiny_heldout(), target);
    const double asr1 = attack_success_rate(p1, testing::tiny_heldout(), target);
    MESSAGE("untrained " << asr0 << ", trained " << asr1);
    CHECK(asr1 > asr0);
    CHECK(asr1 == doctest::Approx(res.log.final_validation_asr));
  }

  TEST_CASE("frozen perturbations sit exactly on their budgets") {
    const auto g = init_generator<float>(quick_config(0.04, 0.1).arch, 2);
    const auto z = SeedPattern<float>::sample(3, 32, 32, 3);
    for (auto [eps, tau] : {std::pair{0.04, 0.1}, {0.03, 0.0}, {0.0, 0.05}, {0.01, 0.15}}) {
      const auto p = freeze_perturbation(g, z, AttackBudget(eps, tau), "m");
      CHECK(std::abs(max_abs(p.noise.tensor().span()) - eps) <= 1e-7);
      CHECK(std::abs(flow_budget(p.flow) - tau) <= 1e-5);
    }
  }

  TEST_CASE("same seed, same result") {
    const auto data = testing::tiny_train().slice(0, 64);
    auto cfg = quick_config(0.04, 0.1);
    const auto a = train(data, testing::trained_target(), cfg);
    const auto b = train(data, testing::trained_target(), cfg);
    CHECK(a.generator.parameter_digest() == b.generator.parameter_digest());
    CHECK(a.log.epochs[0].mean_loss == b.log.epochs[0].mean_loss);
    CHECK(std::isnan(a.log.final_validation_asr));
    cfg.seed = 22;
    const auto c = train(data, testing::trained_target(), cfg);
    CHECK(c.generator.parameter_digest() != a.generator.parameter_digest());
  }

  TEST_CASE("both loss variants and both z policies train") {
    const auto data = testing::tiny_train().slice(0, 64);
    for (auto loss : {LossVariant::scaled_ce, LossVariant::plain_ce})
      for (auto z : {ZPolicy::resample_per_batch, ZPolicy::fixed}) {
        auto cfg = quick_config(0.04, 0.0);
        cfg.loss = loss;
        cfg.z_policy = z;
        const auto res = train(data, testing::trained_target(), cfg);
        CHECK(std::isfinite(res.log.epochs[0].mean_loss));
        CHECK(res.log.epochs[0].mean_loss <= 0.0);
      }
    CHECK(parse_loss_variant("plain_ce") == LossVariant::plain_ce);
    CHECK(parse_z_policy(to_string(ZPolicy::fixed)) == ZPolicy::fixed);
    CHECK_THROWS_AS(parse_loss_variant("hinge"), ContractViolation);
  }

  TEST_CASE("min_steps extends the epoch count") {
    auto cfg = quick_config(0.04, 0.0);
    cfg.min_steps = 5;
    const auto res = train(testing::tiny_train().slice(0, 64), testing::trained_target(), cfg);
    CHECK(res.log.steps == 6);
    CHECK(res.log.epochs.size() == 3);
  }

  TEST_CASE("freezing is deterministic") {
    const auto g = init_generator<float>(quick_config(0.04, 0.1).arch, 4);
    const auto z = deploy_seed_pattern(quick_config(0.04, 0.1));
    CHECK(freeze_perturbation(g, z, AttackBudget(0.04, 0.1), "m") ==
          freeze_perturbation(g, z, AttackBudget(0.04, 0.1), "m"));
  }

  TEST_CASE("non-finite loss raises a training fault with context") {
    NanModel nan;
    try {
      train(testing::tiny_train().slice(0, 32), nan, quick_config(0.04, 0.0));
      FAIL("expected TrainingFault");
    } catch (const TrainingFault& e) {
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
  }

  TEST_CASE("invalid inputs are rejected") {
    LabeledDataset empty;
    empty.images = Tensor<float>({0, 3, 32, 32});
    CHECK_THROWS_AS(train(empty, testing::trained_target(), quick_config(0.04, 0)), ContractViolation);
    auto cfg = quick_config(0.04, 0);
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(testing::tiny_train().slice(0, 8), testing::trained_target(), cfg), ContractViolation);
    cfg = quick_config(0.04, 0);
    cfg.arch.height = cfg.arch.width = 16;
    CHECK_THROWS_AS(train(testing::tiny_train().slice(0, 8), testing::trained_target(), cfg), ContractViolation);
  }
}

TEST_SUITE("perturbation artifact") {
  UniversalPerturbation sample() {
    const auto g = init_generator<float>(quick_config(0.04, 0.1).arch, 5);
    return freeze_perturbation(g, SeedPattern<float>::sample(3, 32, 32, 6), AttackBudget(0.04, 0.1), "convnet4-s5");
  }

  TEST_CASE("round trip is bit-exact") {
    const auto dir = testing::scratch_dir("artifact");
    const auto p = sample();
    save_perturbation(dir / "p.guap", p);
    const auto back = load_perturbation(dir / "p.guap");
    CHECK(back == p);
    const auto x = testing::tiny_heldout().range(0, 10);
    CHECK(back.apply(x) == p.apply(x));
  }

  TEST_CASE("damaged artifacts raise typed errors") {
    const auto dir = testing::scratch_dir("artifact_err");
    save_perturbation(dir / "p.guap", sample());
    const auto bytes = io::read_file(dir / "p.guap");
    auto variant = [&](std::vector<uint8_t> b) {
      io::write_file(dir / "v.guap", b);
      return dir / "v.guap";
    };
    auto b = bytes;
    b[1] = 'X';
    CHECK_THROWS_AS(load_perturbation(variant(b)), io::BadMagic);
    b = bytes;
    b[4] = 2;
    CHECK_THROWS_AS(load_perturbation(variant(b)), io::VersionMismatch);
    b = bytes;
    b[bytes.size() - 100] ^= 0x40;
    CHECK_THROWS_AS(load_perturbation(variant(b)), io::DigestMismatch);
    b.assign(bytes.begin(), bytes.end() - 10);
    CHECK_THROWS_AS(load_perturbation(variant(b)), io::TruncatedFile);
    b.assign(bytes.begin(), bytes.begin() + 50);
    CHECK_THROWS_AS(load_perturbation(variant(b)), io::TruncatedFile);
    CHECK_THROWS(load_perturbation(dir / "missing.guap"));
  }

  TEST_CASE("random baseline respects its budget") {
    const auto p = random_perturbation(AttackBudget(0.04, 0.1), 3, 32, 32, 1);
    CHECK(std::abs(max_abs(p.noise.tensor().span()) - 0.04f) <= 1e-7);
    CHECK(std::abs(flow_budget(p.flow) - 0.1f) <= 1e-5);
  }
}
