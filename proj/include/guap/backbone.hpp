#pragma once

// Target classifiers and labelled data: the frozen-model interface used by
// the attack, small CNN presets, dataset ingestion and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "guap/flowwarp.hpp"
#include "guap/io.hpp"
#include "guap/nn/layers.hpp"
#include "guap/nn/optim.hpp"

namespace guap {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MissingDataFile : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

enum class Split { train, heldout };

struct LabeledDataset {
  Tensor<float> images;  // (N, c, h, w) in [0, 1]
  std::vector<int> labels;
  Split split = Split::train;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t channels() const { return images.dim(1); }
  int64_t height() const { return images.dim(2); }
  int64_t width() const { return images.dim(3); }

  /// Rows [begin, begin + count) as a new dataset.
  LabeledDataset slice(int64_t begin, int64_t count) const;
  /// Images at the given indices, in order.
  Tensor<float> gather(std::span<const int64_t> indices) const;
  Tensor<float> range(int64_t begin, int64_t count) const;
  /// Per-image SHA-256 digests (used to check split disjointness).
  std::vector<io::Digest> image_digests() const;
};

/// Frozen classifier as seen by the attack: deterministic forward, input
/// gradients on demand, never modified by it.
class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual const std::string& id() const = 0;
  virtual int64_t num_classes() const = 0;
  /// (c, h, w) accepted by forward.
  virtual Shape input_shape() const = 0;
  /// (n, c, h, w) -> logits (n, C). Records on tape when non-null.
  virtual Tensor<float> forward(const Tensor<float>& x, nn::Tape<float>* tape) const = 0;
  /// Gradient of a scalar with respect to the input, given its gradient with
  /// respect to the logits of the matching forward.
  virtual Tensor<float> input_gradient(const Tensor<float>& grad_logits, nn::Tape<float>& tape) const = 0;
  virtual io::Digest parameter_digest() const = 0;

  /// Argmax predictions, evaluated in chunks.
  std::vector<int> predict(const Tensor<float>& x, int64_t chunk = 256) const;
};

enum class CnnPreset { convnet4, convnet6, resnet_tiny };

CnnPreset parse_preset(const std::string& name);
std::string to_string(CnnPreset p);

/// Desk-scale CNN classifier built from a preset.
class CnnClassifier final : public TargetModel {
 public:
  CnnClassifier(CnnPreset preset, Shape input_shape, int64_t num_classes, uint64_t seed);

  const std::string& id() const override { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  int64_t num_classes() const override { return classes_; }
  Shape input_shape() const override { return input_shape_; }
  CnnPreset preset() const { return preset_; }
  uint64_t seed() const { return seed_; }

  Tensor<float> forward(const Tensor<float>& x, nn::Tape<float>* tape) const override;
  Tensor<float> input_gradient(const Tensor<float>& grad_logits, nn::Tape<float>& tape) const override;
  io::Digest parameter_digest() const override;

  /// Backward that also accumulates parameter gradients (classifier fitting).
  Tensor<float> backward(const Tensor<float>& grad_logits, nn::Tape<float>& tape, nn::Gradients<float>& grads) const;
  std::vector<nn::Parameter<float>*> parameters() { return net_.parameters(); }
  std::vector<const nn::Parameter<float>*> parameters() const { return net_.parameters(); }

 private:
  CnnPreset preset_;
  Shape input_shape_;
  int64_t classes_;
  uint64_t seed_;
  std::string id_;
  nn::Sequential<float> net_;
};

/// Untrained classifier with deterministic initialisation.
CnnClassifier build_small_cnn(CnnPreset preset, uint64_t seed, Shape input_shape = {3, 32, 32},
                              int64_t num_classes = 10);

struct ClassifierHyper {
  int epochs = 20;
  int batch_size = 128;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
  double lr_decay = 1.0;  // multiplicative, per epoch
  uint64_t seed = 0;      // shuffling
};

struct ClassifierEpoch {
  int epoch;
  double mean_loss;
  double train_accuracy;
  double seconds;
};

using EpochCallback = std::function<void(const ClassifierEpoch&)>;

/// Supervised fitting with mean cross-entropy. Throws TrainingFault on a
/// non-finite loss.
std::vector<ClassifierEpoch> train_classifier(CnnClassifier& model, const LabeledDataset& train,
                                              const ClassifierHyper& hyper, const EpochCallback& on_epoch = {});

double accuracy(const TargetModel& model, const LabeledDataset& data);

void save_checkpoint(const std::filesystem::path& path, const CnnClassifier& model);
CnnClassifier load_checkpoint(const std::filesystem::path& path);

inline constexpr int64_t kCifarRecordBytes = 3073;

/// Reads data_batch_1..5.bin and test_batch.bin (1 label byte + 3072 RGB
/// plane bytes per record). Record counts other than 10000 per file are
/// accepted so that subsets in the same format can be used.
std::pair<LabeledDataset, LabeledDataset> ingest_cifar10(const std::filesystem::path& dir);

/// Writes images/labels as one CIFAR-10 binary batch file.
void write_cifar10_batch(const std::filesystem::path& file, const Tensor<float>& images, std::span<const int> labels);

struct ImageFolderResult {
  LabeledDataset data;
  std::vector<std::string> class_names;
  int64_t skipped = 0;  // undecodable files
};

/// One subdirectory per class (lexicographic order = class index) holding
/// PNG files; images are resized to resolution x resolution.
ImageFolderResult ingest_image_folder(const std::filesystem::path& dir, int64_t resolution, int64_t per_class_cap = 0,
                                      int64_t channels = 3);

}  // namespace guap
