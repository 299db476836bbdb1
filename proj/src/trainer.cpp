#include "guap/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace guap {

ZPolicy parse_z_policy(const std::string& s) {
  if (s == "resample_per_batch") return ZPolicy::resample_per_batch;
  if (s == "fixed") return ZPolicy::fixed;
  throw ContractViolation("unknown z policy '" + s + "' (expected resample_per_batch or fixed)");
}

std::string to_string(ZPolicy p) { return p == ZPolicy::fixed ? "fixed" : "resample_per_batch"; }

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "scaled_ce") return LossVariant::scaled_ce;
  if (s == "plain_ce") return LossVariant::plain_ce;
  throw ContractViolation("unknown loss variant '" + s + "' (expected scaled_ce or plain_ce)");
}

std::string to_string(LossVariant v) { return v == LossVariant::plain_ce ? "plain_ce" : "scaled_ce"; }

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(optimizer.learning_rate > 0.0, "learning rate must be > 0");
  require(lr_decay > 0.0, "lr decay must be > 0");
  require(min_steps >= 0 && validation_limit >= 0, "min_steps and validation_limit must be >= 0");
  AttackBudget(budget.epsilon, budget.tau);
  arch.validate();
}

namespace {

// Independent streams derived from the run seed.
uint64_t derive(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  return rng();
}

enum Stream : uint64_t { kInit = 1, kShuffle = 2, kBatchZ = 3, kDeployZ = 4 };

double prediction_change(const std::vector<int>& a, const std::vector<int>& b) {
  int64_t changed = 0;
  for (size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  return a.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(a.size());
}

}  // namespace

SeedPattern<float> deploy_seed_pattern(const TrainConfig& cfg) {
  return SeedPattern<float>::sample(cfg.arch.in_channels, cfg.arch.height, cfg.arch.width, derive(cfg.seed, kDeployZ));
}

TrainResult train(const LabeledDataset& data, const TargetModel& target, const TrainConfig& cfg,
                  const LabeledDataset* validation, const EpochHook& on_epoch) {
  require(data.size() > 0, "train: empty dataset");
  cfg.validate();
  const Shape img{data.channels(), data.height(), data.width()};
  require(img == Shape({cfg.arch.in_channels, cfg.arch.height, cfg.arch.width}),
          "train: dataset images " + shape_str(img) + " do not match generator arch");
  require(target.input_shape() == img, "train: target expects " + shape_str(target.input_shape()));

  TrainResult res{init_generator<float>(cfg.arch, derive(cfg.seed, kInit)), deploy_seed_pattern(cfg), {}};
  Generator<float>& gen = res.generator;
  nn::Optimizer<float> opt(gen.parameters(), cfg.optimizer);
  const float eps = static_cast<float>(cfg.budget.epsilon);
  const float tau = static_cast<float>(cfg.budget.tau);

  // Labels are the target's own clean predictions.
  const std::vector<int> clean = target.predict(data.images);

  LabeledDataset val_subset;
  std::vector<int> val_clean;
  if (validation) {
    require(validation->size() > 0, "train: empty validation set");
    const int64_t m = cfg.validation_limit > 0 ? std::min(cfg.validation_limit, validation->size()) : validation->size();
    val_subset = validation->slice(0, m);
    val_clean = target.predict(val_subset.images);
  }
  auto validation_asr = [&]() {
    if (!validation) return std::numeric_limits<double>::quiet_NaN();
    const auto p = freeze_perturbation(gen, res.deploy_z, cfg.budget, target.id());
    return prediction_change(val_clean, target.predict(p.apply(val_subset.images)));
  };

  const int64_t n = data.size();
  const int64_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  int epochs = cfg.epochs;
  if (cfg.min_steps > 0) epochs = std::max<int64_t>(epochs, (cfg.min_steps + batches - 1) / batches);

  std::mt19937_64 shuffle_rng(derive(cfg.seed, kShuffle));
  std::mt19937_64 z_rng(derive(cfg.seed, kBatchZ));
  std::vector<int64_t> order(static_cast<size_t>(n));

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int64_t changed = 0;

    for (int64_t b = 0; b < n; b += cfg.batch_size) {
      const int64_t m = std::min<int64_t>(cfg.batch_size, n - b);
      std::span<const int64_t> idx(order.data() + b, static_cast<size_t>(m));
      const Tensor<float> x = data.gather(idx);
      std::vector<int> y(static_cast<size_t>(m));
      for (int64_t k = 0; k < m; ++k) y[k] = clean[idx[k]];

      const SeedPattern<float> z =
          cfg.z_policy == ZPolicy::fixed
              ? res.deploy_z
              : SeedPattern<float>::sample(cfg.arch.in_channels, cfg.arch.height, cfg.arch.width, z_rng());

      nn::Tape<float> gen_tape;
      const auto raw = gen.forward(z, &gen_tape);
      const auto flow = scale_flow(raw.flow, tau).flow;
      const auto noise = scale_noise(raw.noise, eps);
      const auto x_adv = compose_adversarial(x, flow, noise);

      nn::Tape<float> target_tape;
      const auto logits = target.forward(x_adv, &target_tape);
      auto fault = [&](const std::string& what) {
        return TrainingFault("non-finite " + what + " at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b / cfg.batch_size) + " (eps=" + std::to_string(cfg.budget.epsilon) +
                             ", tau=" + std::to_string(cfg.budget.tau) + ")");
      };
      if (!all_finite(logits.span())) throw fault("target logits");
      const auto lg = adversarial_loss_with_grad(logits, y, cfg.loss);
      if (!std::isfinite(lg.loss)) throw fault("adversarial loss");

      const auto grad_x = target.input_gradient(lg.grad_logits, target_tape);
      const auto cg = compose_backward(x, flow, noise, grad_x);
      const auto g_noise = scale_noise_backward(raw.noise, eps, cg.noise);
      const auto g_flow = scale_flow_backward(raw.flow, tau, cg.flow);
      nn::Gradients<float> grads;
      gen.backward(g_noise, g_flow, gen_tape, grads);
      opt.step(grads);
      ++res.log.steps;

      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(m);
      const auto adv_pred = argmax_rows(logits);
      for (int64_t k = 0; k < m; ++k) changed += adv_pred[k] != y[k];
    }
    opt.set_learning_rate(opt.learning_rate() * cfg.lr_decay);

    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), static_cast<double>(changed) / static_cast<double>(n), 0.0,
                    validation_asr()};
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  res.log.final_validation_asr = res.log.epochs.back().validation_asr;
  return res;
}

UniversalPerturbation UniversalPerturbation::identity(int64_t c, int64_t h, int64_t w, std::string target_id) {
  UniversalPerturbation p;
  p.flow = FlowField<float>::zeros(h, w);
  p.noise = NoiseField<float>::zeros(c, h, w);
  p.target_id = std::move(target_id);
  return p;
}

UniversalPerturbation freeze_perturbation(const Generator<float>& g, const SeedPattern<float>& z,
                                          const AttackBudget& budget, std::string target_id) {
  const auto raw = g.forward(z, nullptr);
  auto sf = scale_flow(raw.flow, static_cast<float>(budget.tau));
  UniversalPerturbation p;
  p.flow = std::move(sf.flow);
  p.flow_degenerate = budget.tau > 0.0 && sf.degenerate;
  p.noise = scale_noise(raw.noise, static_cast<float>(budget.epsilon));
  p.budget = budget;
  p.seed_digest = z.digest();
  p.target_id = std::move(target_id);
  return p;
}

UniversalPerturbation random_perturbation(const AttackBudget& budget, int64_t c, int64_t h, int64_t w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> f({2, h, w}), d({c, h, w});
  for (auto& v : f.span()) v = u(rng);
  for (auto& v : d.span()) v = u(rng);
  UniversalPerturbation p;
  p.flow = scale_flow(FlowField<float>(std::move(f)), static_cast<float>(budget.tau)).flow;
  p.noise = scale_noise(NoiseField<float>(std::move(d)), static_cast<float>(budget.epsilon));
  p.budget = budget;
  p.target_id = "random";
  return p;
}

// ------------------------------------------------------------------ artifact

namespace {
constexpr char kMagic[4] = {'G', 'U', 'A', 'P'};
}

void save_perturbation(const std::filesystem::path& path, const UniversalPerturbation& p) {
  require(p.flow.h() == p.h() && p.flow.w() == p.w(), "perturbation flow and noise shapes disagree");
  io::ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kPerturbationVersion);
  w.f64(p.budget.epsilon);
  w.f64(p.budget.tau);
  w.u32(static_cast<uint32_t>(p.c()));
  w.u32(static_cast<uint32_t>(p.h()));
  w.u32(static_cast<uint32_t>(p.w()));
  w.str(p.target_id);
  w.bytes(p.seed_digest);
  w.f32s(p.flow.tensor().span());
  w.f32s(p.noise.tensor().span());
  io::seal(w);
  io::write_file(path, w.buffer());
}

UniversalPerturbation load_perturbation(const std::filesystem::path& path) {
  const auto file = io::read_file(path);
  const std::string src = path.string();
  io::ByteReader r(file, src);
  char magic[4];
  r.raw(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw io::BadMagic(src + ": not a perturbation artifact");
  const uint32_t version = r.u32();
  if (version != kPerturbationVersion)
    throw io::VersionMismatch(src + ": artifact version " + std::to_string(version) + ", expected " +
                              std::to_string(kPerturbationVersion));
  const double eps = r.f64();
  const double tau = r.f64();
  const int64_t c = r.u32(), h = r.u32(), w = r.u32();
  if (c < 1 || h < 1 || w < 1 || c * h * w > (int64_t{1} << 32))
    throw io::FormatError(src + ": implausible perturbation shape");
  UniversalPerturbation p;
  p.target_id = r.str();
  const auto digest = r.take(32);
  std::copy(digest.begin(), digest.end(), p.seed_digest.begin());
  Tensor<float> flow({2, h, w}), noise({c, h, w});
  r.f32s(flow.span());
  r.f32s(noise.span());
  io::verify_seal(file, r.offset(), src);
  if (!(eps >= 0.0 && eps <= 1.0 && tau >= 0.0)) throw io::FormatError(src + ": budget out of range");
  p.budget = AttackBudget(eps, tau);
  p.flow = FlowField<float>(std::move(flow));
  p.noise = NoiseField<float>(std::move(noise));
  p.flow_degenerate = tau > 0.0 && max_abs(p.flow.tensor().span()) == 0.0f;
  return p;
}

}  // namespace guap
