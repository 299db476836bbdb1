#pragma once

// Measurement harness: attack success rate, l2 on the 8-bit scale,
// transferability matrices, budget ablations and sample-size studies, plus
// their CSV / PNG reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "guap/backbone.hpp"
#include "guap/trainer.hpp"

namespace guap {

enum class AsrMode {
  prediction_change,  // argmax h(x_adv) != argmax h(x), over every image
  initially_correct,  // same, restricted to images h classifies correctly
};

/// Fraction of images whose prediction changes under p. Throws
/// ContractViolation on an empty dataset or a shape mismatch.
double attack_success_rate(const UniversalPerturbation& p, const LabeledDataset& data, const TargetModel& model,
                           AsrMode mode = AsrMode::prediction_change);

struct L2Report {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::vector<double> values;  // per image
};

/// Per-image l2 of x_adv - x after both are mapped to round(255 * v).
L2Report l2_report(const UniversalPerturbation& p, const Tensor<float>& images);

struct EvalReport {
  double asr = 0.0;
  double asr_initially_correct = 0.0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  std::vector<double> per_class_asr;  // by true label; NaN for absent classes
  L2Report l2;
};

EvalReport evaluate(const UniversalPerturbation& p, const LabeledDataset& data, const TargetModel& model);

struct TransferMatrix {
  std::vector<std::string> sources;  // rows: model each perturbation was trained on
  std::vector<std::string> victims;  // columns
  std::vector<std::vector<std::optional<double>>> asr;  // nullopt = invalid cell
  std::vector<std::string> errors;                      // one line per invalid cell

  /// Column means over valid rows, with and without the diagonal.
  std::vector<double> column_average(bool include_diagonal) const;
};

TransferMatrix transfer_matrix(const std::vector<UniversalPerturbation>& perts,
                               const std::vector<const TargetModel*>& models, const LabeledDataset& data);

struct AblationGrid {
  std::vector<double> epsilons;
  std::vector<double> taus;
  std::vector<std::vector<double>> asr;  // [tau][epsilon]; NaN for failed cells
  std::vector<std::string> errors;
};

using CellHook = std::function<void(double eps, double tau, double asr)>;

/// One perturbation per (epsilon, tau) with shared seeds and data order;
/// each cell reports held-out ASR. A failing cell is recorded and skipped.
AblationGrid ablation_grid(const LabeledDataset& train_set, const LabeledDataset& heldout, const TargetModel& model,
                           const std::vector<double>& epsilons, const std::vector<double>& taus,
                           const TrainConfig& cfg, const CellHook& on_cell = {});

struct SamplePoint {
  int64_t size;
  double asr;
  io::Digest subset_digest;  // digest of the training prefix used
};

/// Trains on nested prefixes of train_set (sizes ascending) and scores each
/// perturbation on the full held-out set.
std::vector<SamplePoint> sample_size_study(const LabeledDataset& train_set, const LabeledDataset& heldout,
                                           const TargetModel& model, const std::vector<int64_t>& sizes,
                                           const TrainConfig& cfg,
                                           const std::function<void(const SamplePoint&)>& on_point = {});

// ------------------------------------------------------------------ reports

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r);
void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log);
void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& m);
void write_grid_csv(const std::filesystem::path& path, const AblationGrid& g);
void write_sample_csv(const std::filesystem::path& path, const std::vector<SamplePoint>& pts);

/// Rows = taus, columns = epsilons, dark-to-bright for 0..1.
void write_grid_heatmap(const std::filesystem::path& path, const AblationGrid& g);
/// Polyline of y over x (both scaled to the plot box) on a white canvas.
void write_curve_png(const std::filesystem::path& path, const std::vector<double>& xs, const std::vector<double>& ys);

/// For each of the first `count` images writes sample_<i>_clean.png,
/// sample_<i>_warped.png (flow only) and sample_<i>_final.png into dir.
void export_triplets(const std::filesystem::path& dir, const UniversalPerturbation& p, const Tensor<float>& images,
                     int64_t count, int64_t scale = 4);

}  // namespace guap
