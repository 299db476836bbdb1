// guap: train targets, synthesize universal perturbations, evaluate and
// ablate them. Exit codes: 0 success, 1 usage/config error, 2 runtime fault.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "guap/config.hpp"
#include "guap/evaluation.hpp"
#include "guap/synthetic.hpp"

using namespace guap;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string run_dir;
  std::string tag;
  // flag overrides
  std::string data_path, data_format, checkpoint, preset, budget_preset, perturbation;
  std::optional<double> epsilon, tau;
  std::optional<int> epochs;
  std::optional<uint64_t> seed;
  std::vector<std::string> perturbations, checkpoints;
  std::vector<int64_t> sizes;
  std::optional<int64_t> count;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--run-dir", c.run_dir, "write outputs here instead of outputs/<timestamp>-<tag>/");
  sub->add_option("--tag", c.tag, "run directory tag");
  sub->add_option("--data", c.data_path, "dataset directory (data.path)");
  sub->add_option("--format", c.data_format, "cifar10 | image_folder | synthetic (data.format)");
  sub->add_option("--seed", c.seed, "seed for both model and attack");
}

RunConfig resolve(const Common& c, const std::string& default_tag) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.config_path.empty()) cfg.tag = default_tag;
  if (!c.tag.empty()) cfg.tag = c.tag;
  if (!c.data_path.empty()) cfg.data.path = c.data_path;
  if (!c.data_format.empty()) cfg.data.format = c.data_format;
  if (!c.checkpoint.empty()) cfg.model.checkpoint = c.checkpoint;
  if (!c.preset.empty()) cfg.model.preset = c.preset;
  if (!c.perturbation.empty()) cfg.perturbation = c.perturbation;
  if (!c.perturbations.empty()) cfg.perturbations = c.perturbations;
  if (!c.checkpoints.empty()) cfg.checkpoints = c.checkpoints;
  if (!c.sizes.empty()) cfg.sizes = c.sizes;
  if (c.count) cfg.export_count = *c.count;
  if (c.seed) {
    cfg.attack.seed = *c.seed;
    cfg.model.hyper.seed = *c.seed;
  }
  if (c.epochs) {
    cfg.attack.epochs = *c.epochs;
    cfg.model.hyper.epochs = *c.epochs;
  }
  AttackBudget b = cfg.attack.budget;
  if (!c.budget_preset.empty()) b = budget_preset(c.budget_preset);
  try {
    b = AttackBudget(c.epsilon.value_or(b.epsilon), c.tau.value_or(b.tau));
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("attack budget: ") + e.what());
  }
  cfg.attack.budget = b;
  try {
    cfg.attack.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  return cfg;
}

fs::path open_run(const Common& c, const RunConfig& cfg) {
  fs::path dir = c.run_dir.empty() ? make_run_dir(cfg.output_root, cfg.tag) : fs::path(c.run_dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << to_json(cfg) << "\n";
  std::cerr << "run directory: " << dir.string() << "\n";
  return dir;
}

CnnClassifier need_checkpoint(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is required");
  if (!fs::exists(path)) throw ConfigError(std::string(key) + ": file not found: " + path);
  return load_checkpoint(path);
}

UniversalPerturbation need_perturbation(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is required");
  if (!fs::exists(path)) throw ConfigError(std::string(key) + ": file not found: " + path);
  return load_perturbation(path);
}

void check_shape(const UniversalPerturbation& p, const LabeledDataset& d) {
  if (p.c() != d.channels() || p.h() != d.height() || p.w() != d.width())
    throw ConfigError("perturbation shape (" + std::to_string(p.c()) + "," + std::to_string(p.h()) + "," +
                      std::to_string(p.w()) + ") does not match dataset images (" + std::to_string(d.channels()) +
                      "," + std::to_string(d.height()) + "," + std::to_string(d.width()) + ")");
}

TrainConfig attack_config(RunConfig& cfg, const LabeledDataset& train) {
  TrainConfig t = cfg.attack;
  t.arch.in_channels = train.channels();
  t.arch.height = train.height();
  t.arch.width = train.width();
  return t;
}

void print_epoch(const EpochRecord& r) {
  std::cerr << "  epoch " << r.epoch << "  loss " << std::setprecision(5) << r.mean_loss << "  train ASR "
            << r.train_asr;
  if (!std::isnan(r.validation_asr)) std::cerr << "  held-out ASR " << r.validation_asr;
  std::cerr << "  (" << std::setprecision(3) << r.seconds << " s)\n";
}

int cmd_train_target(const Common& c) {
  RunConfig cfg = resolve(c, "target");
  auto [train_set, heldout] = load_datasets(cfg.data);
  const fs::path dir = open_run(c, cfg);
  auto model = build_small_cnn(parse_preset(cfg.model.preset), cfg.model.hyper.seed,
                               {train_set.channels(), train_set.height(), train_set.width()},
                               1 + *std::max_element(train_set.labels.begin(), train_set.labels.end()));
  std::ofstream log(dir / "train_log.csv");
  log << "epoch,mean_loss,train_accuracy,seconds\n";
  train_classifier(model, train_set, cfg.model.hyper, [&](const ClassifierEpoch& e) {
    std::cerr << "  epoch " << e.epoch << "  loss " << e.mean_loss << "  train acc " << e.train_accuracy << "\n";
    log << e.epoch << "," << e.mean_loss << "," << e.train_accuracy << "," << e.seconds << "\n";
  });
  const double acc = accuracy(model, heldout);
  save_checkpoint(dir / "model.ckpt", model);
  std::ofstream(dir / "metrics.csv") << "metric,value\nheldout_accuracy," << std::setprecision(10) << acc << "\n";
  std::cout << "held-out accuracy " << std::setprecision(6) << acc << "\n"
            << "checkpoint " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_attack(const Common& c) {
  RunConfig cfg = resolve(c, "attack");
  if (cfg.attack.budget.is_identity())
    std::cerr << "warning: epsilon = 0 and tau = 0 give the identity perturbation (ASR 0)\n";
  const auto target = need_checkpoint(cfg.model.checkpoint, "model.checkpoint");
  auto [train_set, heldout] = load_datasets(cfg.data);
  const fs::path dir = open_run(c, cfg);
  const TrainConfig t = attack_config(cfg, train_set);
  std::cerr << "training generator: eps " << t.budget.epsilon << ", tau " << t.budget.tau << ", " << train_set.size()
            << " images\n";
  const auto res = train(train_set, target, t, &heldout, print_epoch);
  const auto p = freeze_perturbation(res.generator, res.deploy_z, t.budget, target.id());
  save_perturbation(dir / "perturbation.guap", p);
  save_generator(dir / "generator.ckpt", res.generator);
  write_train_log_csv(dir / "train_log.csv", res.log);
  const auto report = evaluate(p, heldout, target);
  write_eval_csv(dir / "eval.csv", report);
  std::cout << "held-out ASR " << std::setprecision(6) << report.asr << "\n"
            << "perturbation " << (dir / "perturbation.guap").string() << "\n";
  return 0;
}

int cmd_eval(const Common& c) {
  RunConfig cfg = resolve(c, "eval");
  const auto p = need_perturbation(cfg.perturbation, "perturbation");
  const auto model = need_checkpoint(cfg.model.checkpoint, "model.checkpoint");
  auto [train_set, heldout] = load_datasets(cfg.data);
  check_shape(p, heldout);
  const fs::path dir = open_run(c, cfg);
  const auto report = evaluate(p, heldout, model);
  write_eval_csv(dir / "eval.csv", report);
  std::cout << "ASR " << std::setprecision(6) << report.asr << "\n";
  if (cfg.initially_correct) std::cout << "ASR (initially correct) " << report.asr_initially_correct << "\n";
  std::cout << "clean accuracy " << report.clean_accuracy << "\nl2 mean " << report.l2.mean << "\n";
  return 0;
}

int cmd_transfer(const Common& c) {
  RunConfig cfg = resolve(c, "transfer");
  if (cfg.perturbations.empty()) throw ConfigError("perturbations is required");
  if (cfg.checkpoints.empty()) throw ConfigError("checkpoints is required");
  std::vector<UniversalPerturbation> perts;
  for (const auto& p : cfg.perturbations) perts.push_back(need_perturbation(p, "perturbations"));
  std::vector<CnnClassifier> models;
  for (const auto& m : cfg.checkpoints) models.push_back(need_checkpoint(m, "checkpoints"));
  std::vector<const TargetModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  auto [train_set, heldout] = load_datasets(cfg.data);
  const fs::path dir = open_run(c, cfg);
  const auto m = transfer_matrix(perts, ptrs, heldout);
  write_transfer_csv(dir / "transfer.csv", m);
  for (const auto& e : m.errors) std::cerr << "warning: " << e << "\n";
  std::ifstream in(dir / "transfer.csv");
  std::cout << in.rdbuf();
  return 0;
}

int cmd_ablate(const Common& c) {
  RunConfig cfg = resolve(c, "ablate");
  const auto model = need_checkpoint(cfg.model.checkpoint, "model.checkpoint");
  auto [train_set, heldout] = load_datasets(cfg.data);
  const fs::path dir = open_run(c, cfg);
  const auto g = ablation_grid(train_set, heldout, model, cfg.epsilons, cfg.taus, attack_config(cfg, train_set),
                               [](double e, double t, double a) {
                                 std::cerr << "  eps " << e << "  tau " << t << "  ASR " << a << "\n";
                               });
  write_grid_csv(dir / "grid.csv", g);
  write_grid_heatmap(dir / "grid.png", g);
  for (const auto& e : g.errors) std::cerr << "warning: " << e << "\n";
  std::cout << "grid " << (dir / "grid.csv").string() << "\n";
  return 0;
}

int cmd_sample_study(const Common& c) {
  RunConfig cfg = resolve(c, "sample-study");
  const auto model = need_checkpoint(cfg.model.checkpoint, "model.checkpoint");
  auto [train_set, heldout] = load_datasets(cfg.data);
  const fs::path dir = open_run(c, cfg);
  const auto pts = sample_size_study(train_set, heldout, model, cfg.sizes, attack_config(cfg, train_set),
                                     [](const SamplePoint& p) {
                                       std::cerr << "  size " << p.size << "  ASR " << p.asr << "\n";
                                     });
  write_sample_csv(dir / "sample_study.csv", pts);
  std::vector<double> xs, ys;
  for (const auto& p : pts) {
    xs.push_back(static_cast<double>(p.size));
    ys.push_back(p.asr);
  }
  write_curve_png(dir / "sample_study.png", xs, ys);
  std::cout << "study " << (dir / "sample_study.csv").string() << "\n";
  return 0;
}

int cmd_export_images(const Common& c) {
  RunConfig cfg = resolve(c, "export");
  const auto p = need_perturbation(cfg.perturbation, "perturbation");
  auto [train_set, heldout] = load_datasets(cfg.data);
  check_shape(p, heldout);
  const fs::path dir = open_run(c, cfg);
  export_triplets(dir / "images", p, heldout.images, cfg.export_count, cfg.export_scale);
  std::cout << "images " << (dir / "images").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalizing universal adversarial perturbations: flow + noise attack toolkit"};
  app.require_subcommand(1);
  Common c;

  auto* train_target = app.add_subcommand("train-target", "train a desk-scale target classifier");
  add_common(train_target, c);
  train_target->add_option("--preset", c.preset, "convnet4 | convnet6 | resnet-tiny");
  train_target->add_option("--epochs", c.epochs);

  auto* attack = app.add_subcommand("attack", "train a generator and freeze a universal perturbation");
  add_common(attack, c);
  attack->add_option("--checkpoint", c.checkpoint, "target checkpoint (model.checkpoint)");
  attack->add_option("--preset", c.budget_preset, "budget preset v1 | v2 | v3");
  attack->add_option("--epsilon", c.epsilon, "l-inf noise budget");
  attack->add_option("--tau", c.tau, "flow budget in pixels");
  attack->add_option("--epochs", c.epochs);

  auto* eval = app.add_subcommand("eval", "ASR, clean accuracy and l2 of a perturbation");
  add_common(eval, c);
  eval->add_option("--perturbation", c.perturbation);
  eval->add_option("--checkpoint", c.checkpoint);

  auto* transfer = app.add_subcommand("transfer", "cross-model ASR matrix");
  add_common(transfer, c);
  transfer->add_option("--perturbation", c.perturbations, "row perturbations (repeatable)");
  transfer->add_option("--checkpoint", c.checkpoints, "column models (repeatable)");

  auto* ablate = app.add_subcommand("ablate", "epsilon x tau grid");
  add_common(ablate, c);
  ablate->add_option("--checkpoint", c.checkpoint);
  ablate->add_option("--epochs", c.epochs);

  auto* study = app.add_subcommand("sample-study", "ASR versus number of training images");
  add_common(study, c);
  study->add_option("--checkpoint", c.checkpoint);
  study->add_option("--sizes", c.sizes, "ascending training-set sizes");
  study->add_option("--epochs", c.epochs);

  auto* export_images = app.add_subcommand("export-images", "clean / warped / final PNG triplets");
  add_common(export_images, c);
  export_images->add_option("--perturbation", c.perturbation);
  export_images->add_option("--count", c.count);

  std::string synth_out;
  SyntheticConfig synth;
  auto* make_synth = app.add_subcommand("make-synthetic", "write the procedural stand-in in CIFAR-10 binary format");
  make_synth->add_option("--out", synth_out, "output directory")->required();
  make_synth->add_option("--train-size", synth.train_size);
  make_synth->add_option("--test-size", synth.test_size);
  make_synth->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_target) return cmd_train_target(c);
    if (*attack) return cmd_attack(c);
    if (*eval) return cmd_eval(c);
    if (*transfer) return cmd_transfer(c);
    if (*ablate) return cmd_ablate(c);
    if (*study) return cmd_sample_study(c);
    if (*export_images) return cmd_export_images(c);
    if (*make_synth) {
      write_synthetic_cifar10(synth_out, synth);
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
