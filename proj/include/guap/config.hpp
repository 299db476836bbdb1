#pragma once

// Run configuration for the command-line tool: a JSON document with nested
// sections. Unknown keys are rejected at every level and every run writes
// the fully resolved document next to its outputs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "guap/backbone.hpp"
#include "guap/synthetic.hpp"
#include "guap/trainer.hpp"

namespace guap {

/// Bad or missing configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::string format = "cifar10";  // cifar10 | image_folder | synthetic
  std::string path;                // cifar10 directory or image-folder root of the training split
  std::string heldout_path;        // image_folder only
  int64_t resolution = 32;         // image_folder only
  int64_t per_class_cap = 0;       // image_folder only
  int64_t train_limit = 0;         // first N training images; 0 = all
  int64_t heldout_limit = 0;
  SyntheticConfig synthetic{};     // format == synthetic
};

struct ModelSection {
  std::string preset = "convnet4";
  std::string checkpoint;  // existing checkpoint for attack/eval
  ClassifierHyper hyper{};
};

struct RunConfig {
  std::string tag = "run";
  std::string output_root = "outputs";
  DataSection data;
  ModelSection model;
  TrainConfig attack;
  std::string perturbation;                // eval / export-images
  bool initially_correct = false;          // eval: also report the restricted ASR
  std::vector<std::string> perturbations;  // transfer rows
  std::vector<std::string> checkpoints;    // transfer columns
  std::vector<double> epsilons{0.0, 0.01, 0.02, 0.03, 0.04};
  std::vector<double> taus{0.0, 0.05, 0.1, 0.15};
  std::vector<int64_t> sizes{500, 1000, 2000, 5000, 10000};
  int64_t export_count = 8;
  int64_t export_scale = 4;
};

/// Parses JSON text; throws ConfigError naming the first unknown or
/// ill-typed key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

/// Named attack budgets: v1 (0.04, 0), v2 (0.03, 0.1), v3 (0.04, 0.1).
AttackBudget budget_preset(const std::string& name);

/// Loads (train, heldout) as configured, applying the limits. Throws
/// ConfigError when a required path is missing.
std::pair<LabeledDataset, LabeledDataset> load_datasets(const DataSection& d);

/// outputs/<YYYYmmdd-HHMMSS>-<tag>/ under root; GUAP_OUTPUT_ROOT, when set,
/// replaces root. A numeric suffix avoids collisions. The directory is created.
std::filesystem::path make_run_dir(const std::string& root, const std::string& tag);

}  // namespace guap
