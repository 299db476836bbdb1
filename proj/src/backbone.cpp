#include "guap/backbone.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "guap/generator.hpp"
#include "guap/image_io.hpp"
#include "guap/objective.hpp"

namespace guap {

using nlohmann::json;

// --------------------------------------------------------------- dataset

LabeledDataset LabeledDataset::slice(int64_t begin, int64_t count) const {
  require(begin >= 0 && count >= 0 && begin + count <= size(), "dataset slice out of range");
  LabeledDataset out;
  out.images = range(begin, count);
  out.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  out.split = split;
  return out;
}

Tensor<float> LabeledDataset::gather(std::span<const int64_t> indices) const {
  const int64_t per = channels() * height() * width();
  Tensor<float> out({static_cast<int64_t>(indices.size()), channels(), height(), width()});
  for (size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] >= 0 && indices[k] < size(), "dataset index out of range");
    std::copy_n(images.data() + indices[k] * per, per, out.data() + static_cast<int64_t>(k) * per);
  }
  return out;
}

Tensor<float> LabeledDataset::range(int64_t begin, int64_t count) const {
  require(begin >= 0 && count >= 0 && begin + count <= size(), "dataset range out of bounds");
  const int64_t per = channels() * height() * width();
  Tensor<float> out({count, channels(), height(), width()});
  std::copy_n(images.data() + begin * per, count * per, out.data());
  return out;
}

std::vector<io::Digest> LabeledDataset::image_digests() const {
  const int64_t per = channels() * height() * width();
  std::vector<io::Digest> out;
  out.reserve(static_cast<size_t>(size()));
  for (int64_t i = 0; i < size(); ++i)
    out.push_back(io::sha256_of(std::span<const float>(images.data() + i * per, static_cast<size_t>(per))));
  return out;
}

// ------------------------------------------------------------ classifier

std::vector<int> TargetModel::predict(const Tensor<float>& x, int64_t chunk) const {
  const int64_t n = x.dim(0);
  const int64_t per = x.size() / std::max<int64_t>(n, 1);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t b = 0; b < n; b += chunk) {
    const int64_t m = std::min(chunk, n - b);
    Tensor<float> part({m, x.dim(1), x.dim(2), x.dim(3)});
    std::copy_n(x.data() + b * per, m * per, part.data());
    const auto pred = argmax_rows(forward(part, nullptr));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

CnnPreset parse_preset(const std::string& name) {
  if (name == "convnet4") return CnnPreset::convnet4;
  if (name == "convnet6") return CnnPreset::convnet6;
  if (name == "resnet-tiny") return CnnPreset::resnet_tiny;
  throw ContractViolation("unknown model preset '" + name + "' (expected convnet4, convnet6 or resnet-tiny)");
}

std::string to_string(CnnPreset p) {
  switch (p) {
    case CnnPreset::convnet4: return "convnet4";
    case CnnPreset::convnet6: return "convnet6";
    case CnnPreset::resnet_tiny: return "resnet-tiny";
  }
  return "?";
}

namespace {

using nn::ConvGeometry;

void conv_relu(nn::Sequential<float>& s, const std::string& name, int64_t in, int64_t out) {
  s.add<nn::Conv2d<float>>(name, in, out, ConvGeometry{3, 1, 1});
  s.add<nn::ReLU<float>>();
}

nn::Sequential<float> build_network(CnnPreset preset, const Shape& in, int64_t classes) {
  const int64_t c = in[0], h = in[1], w = in[2];
  nn::Sequential<float> s;
  switch (preset) {
    case CnnPreset::convnet4:
      require(h % 4 == 0 && w % 4 == 0, "convnet4 needs h, w divisible by 4");
      conv_relu(s, "conv1", c, 32);
      conv_relu(s, "conv2", 32, 32);
      s.add<nn::MaxPool2d<float>>();
      conv_relu(s, "conv3", 32, 64);
      conv_relu(s, "conv4", 64, 64);
      s.add<nn::MaxPool2d<float>>();
      s.add<nn::Flatten<float>>();
      s.add<nn::Linear<float>>("fc", 64 * (h / 4) * (w / 4), classes);
      break;
    case CnnPreset::convnet6:
      require(h % 8 == 0 && w % 8 == 0, "convnet6 needs h, w divisible by 8");
      conv_relu(s, "conv1", c, 32);
      conv_relu(s, "conv2", 32, 32);
      s.add<nn::MaxPool2d<float>>();
      conv_relu(s, "conv3", 32, 64);
      conv_relu(s, "conv4", 64, 64);
      s.add<nn::MaxPool2d<float>>();
      conv_relu(s, "conv5", 64, 128);
      conv_relu(s, "conv6", 128, 128);
      s.add<nn::MaxPool2d<float>>();
      s.add<nn::Flatten<float>>();
      s.add<nn::Linear<float>>("fc", 128 * (h / 8) * (w / 8), classes);
      break;
    case CnnPreset::resnet_tiny: {
      require(h % 4 == 0 && w % 4 == 0, "resnet-tiny needs h, w divisible by 4");
      auto block = [](const std::string& name, int64_t ch) {
        nn::Sequential<float> body;
        conv_relu(body, name + ".conv1", ch, ch);
        body.add<nn::Conv2d<float>>(name + ".conv2", ch, ch, ConvGeometry{3, 1, 1});
        return body;
      };
      conv_relu(s, "stem", c, 32);
      s.add<nn::Residual<float>>(block("block1", 32));
      s.add<nn::ReLU<float>>();
      s.add<nn::MaxPool2d<float>>();
      conv_relu(s, "widen", 32, 64);
      s.add<nn::Residual<float>>(block("block2", 64));
      s.add<nn::ReLU<float>>();
      s.add<nn::MaxPool2d<float>>();
      s.add<nn::GlobalAvgPool<float>>();
      s.add<nn::Linear<float>>("fc", 64, classes);
      break;
    }
  }
  return s;
}

}  // namespace

CnnClassifier::CnnClassifier(CnnPreset preset, Shape input_shape, int64_t num_classes, uint64_t seed)
    : preset_(preset),
      input_shape_(std::move(input_shape)),
      classes_(num_classes),
      seed_(seed),
      id_(to_string(preset) + "-s" + std::to_string(seed)) {
  require(input_shape_.size() == 3, "classifier input shape must be (c, h, w)");
  require(num_classes >= 2, "classifier needs at least two classes");
  net_ = build_network(preset_, input_shape_, classes_);
}

Tensor<float> CnnClassifier::forward(const Tensor<float>& x, nn::Tape<float>* tape) const {
  require(x.rank() == 4 && Shape(x.shape().begin() + 1, x.shape().end()) == input_shape_,
          "classifier " + id_ + " expects (n," + shape_str(input_shape_).substr(1) + ", got " + shape_str(x.shape()));
  return net_.forward(x, tape);
}

Tensor<float> CnnClassifier::input_gradient(const Tensor<float>& grad_logits, nn::Tape<float>& tape) const {
  return net_.backward(grad_logits, tape, nullptr);
}

Tensor<float> CnnClassifier::backward(const Tensor<float>& grad_logits, nn::Tape<float>& tape,
                                      nn::Gradients<float>& grads) const {
  return net_.backward(grad_logits, tape, &grads);
}

io::Digest CnnClassifier::parameter_digest() const {
  io::ByteWriter w;
  for (const auto* p : net_.parameters()) {
    w.str(p->name);
    w.f32s(p->value.span());
  }
  return io::sha256(w.buffer());
}

CnnClassifier build_small_cnn(CnnPreset preset, uint64_t seed, Shape input_shape, int64_t num_classes) {
  CnnClassifier m(preset, std::move(input_shape), num_classes, seed);
  std::mt19937_64 rng(seed);
  nn::initialize(m.parameters(), nn::InitScheme::he_uniform, rng);
  return m;
}

std::vector<ClassifierEpoch> train_classifier(CnnClassifier& model, const LabeledDataset& train,
                                              const ClassifierHyper& hyper, const EpochCallback& on_epoch) {
  require(train.size() > 0, "train_classifier: empty dataset");
  require(hyper.epochs >= 1 && hyper.batch_size >= 1, "train_classifier: epochs and batch size must be >= 1");
  nn::Optimizer<float> opt(model.parameters(), hyper.optimizer);
  std::mt19937_64 rng(hyper.seed);
  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<ClassifierEpoch> log;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (int64_t b = 0; b < train.size(); b += hyper.batch_size) {
      const int64_t m = std::min<int64_t>(hyper.batch_size, train.size() - b);
      std::span<const int64_t> idx(order.data() + b, static_cast<size_t>(m));
      const Tensor<float> x = train.gather(idx);
      std::vector<int> y(static_cast<size_t>(m));
      for (int64_t k = 0; k < m; ++k) y[k] = train.labels[idx[k]];
      nn::Tape<float> tape;
      nn::Gradients<float> grads;
      const auto logits = model.forward(x, &tape);
      const auto lg = mean_cross_entropy_with_grad(logits, y);
      if (!std::isfinite(lg.loss)) throw TrainingFault("classifier loss became non-finite in epoch " + std::to_string(epoch));
      model.backward(lg.grad_logits, tape, grads);
      opt.step(grads);
      loss_sum += lg.loss * static_cast<double>(m);
      const auto pred = argmax_rows(logits);
      for (int64_t k = 0; k < m; ++k) correct += pred[k] == y[k];
    }
    opt.set_learning_rate(opt.learning_rate() * hyper.lr_decay);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({epoch, loss_sum / static_cast<double>(train.size()),
                   static_cast<double>(correct) / static_cast<double>(train.size()), secs});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

double accuracy(const TargetModel& model, const LabeledDataset& data) {
  require(data.size() > 0, "accuracy: empty dataset");
  const auto pred = model.predict(data.images);
  int64_t correct = 0;
  for (int64_t i = 0; i < data.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_checkpoint(const std::filesystem::path& path, const CnnClassifier& model) {
  io::NamedTensors nt;
  nt.metadata = json{{"kind", "classifier"},
                     {"preset", to_string(model.preset())},
                     {"id", model.id()},
                     {"classes", model.num_classes()},
                     {"input_shape", model.input_shape()},
                     {"seed", model.seed()},
                     {"digest", io::to_hex(model.parameter_digest())}}
                    .dump();
  for (const auto* p : model.parameters()) nt.tensors.emplace_back(p->name, p->value);
  io::save_named_tensors(path, nt);
}

CnnClassifier load_checkpoint(const std::filesystem::path& path) {
  auto nt = io::load_named_tensors(path);
  const json meta = json::parse(nt.metadata);
  if (meta.value("kind", "") != "classifier")
    throw io::FormatError(path.string() + ": checkpoint is not a classifier");
  CnnClassifier m(parse_preset(meta.at("preset").get<std::string>()), meta.at("input_shape").get<Shape>(),
                  meta.at("classes").get<int64_t>(), meta.at("seed").get<uint64_t>());
  m.set_id(meta.at("id").get<std::string>());
  auto params = m.parameters();
  if (params.size() != nt.tensors.size())
    throw io::FormatError(path.string() + ": parameter count does not match preset");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = nt.tensors[i];
    if (name != params[i]->name || t.shape() != params[i]->value.shape())
      throw io::FormatError(path.string() + ": unexpected tensor '" + name + "'");
    params[i]->value = std::move(t);
  }
  if (io::to_hex(m.parameter_digest()) != meta.at("digest").get<std::string>())
    throw io::DigestMismatch(path.string() + ": parameter digest does not match recorded digest");
  return m;
}

// ---------------------------------------------------------------- CIFAR-10

namespace {

constexpr int64_t kCifarSide = 32;
constexpr int64_t kCifarPixels = 3 * kCifarSide * kCifarSide;

void read_cifar_file(const std::filesystem::path& file, std::vector<float>& pixels, std::vector<int>& labels) {
  if (!std::filesystem::exists(file)) throw MissingDataFile("missing CIFAR-10 batch file " + file.string());
  const auto bytes = io::read_file(file);
  const auto len = static_cast<int64_t>(bytes.size());
  if (len == 0 || len % kCifarRecordBytes != 0) {
    const int64_t records = std::max<int64_t>(1, (len + kCifarRecordBytes - 1) / kCifarRecordBytes);
    throw io::TruncatedFile("CIFAR-10 batch " + file.string() + " has " + std::to_string(len) +
                            " bytes; expected " + std::to_string(records * kCifarRecordBytes) + " (" +
                            std::to_string(records) + " records of 3073 bytes)");
  }
  const int64_t records = len / kCifarRecordBytes;
  const size_t base = pixels.size();
  pixels.resize(base + static_cast<size_t>(records * kCifarPixels));
  for (int64_t r = 0; r < records; ++r) {
    const uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw DatasetError(file.string() + ": label " + std::to_string(rec[0]) + " out of range in record " + std::to_string(r));
    labels.push_back(rec[0]);
    float* dst = pixels.data() + base + static_cast<size_t>(r * kCifarPixels);
    for (int64_t k = 0; k < kCifarPixels; ++k) dst[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
}

LabeledDataset make_dataset(std::vector<float> pixels, std::vector<int> labels, Split split) {
  LabeledDataset d;
  const auto n = static_cast<int64_t>(labels.size());
  d.images = Tensor<float>({n, 3, kCifarSide, kCifarSide}, std::move(pixels));
  d.labels = std::move(labels);
  d.split = split;
  return d;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> ingest_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingDataFile("CIFAR-10 directory not found: " + dir.string());
  std::vector<float> train_px, test_px;
  std::vector<int> train_y, test_y;
  for (int b = 1; b <= 5; ++b) read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), train_px, train_y);
  read_cifar_file(dir / "test_batch.bin", test_px, test_y);
  return {make_dataset(std::move(train_px), std::move(train_y), Split::train),
          make_dataset(std::move(test_px), std::move(test_y), Split::heldout)};
}

void write_cifar10_batch(const std::filesystem::path& file, const Tensor<float>& images, std::span<const int> labels) {
  require(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == kCifarSide && images.dim(3) == kCifarSide,
          "CIFAR-10 records are (3,32,32)");
  require(static_cast<int64_t>(labels.size()) == images.dim(0), "label count mismatch");
  std::vector<uint8_t> bytes(static_cast<size_t>(images.dim(0) * kCifarRecordBytes));
  for (int64_t r = 0; r < images.dim(0); ++r) {
    require(labels[r] >= 0 && labels[r] <= 9, "CIFAR-10 label out of range");
    uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    rec[0] = static_cast<uint8_t>(labels[r]);
    for (int64_t k = 0; k < kCifarPixels; ++k)
      rec[1 + k] = static_cast<uint8_t>(std::lround(std::clamp(images[r * kCifarPixels + k], 0.0f, 1.0f) * 255.0f));
  }
  io::write_file(file, bytes);
}

// ------------------------------------------------------------ image folder

ImageFolderResult ingest_image_folder(const std::filesystem::path& dir, int64_t resolution, int64_t per_class_cap,
                                      int64_t channels) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingDataFile("image folder not found: " + dir.string());
  require(resolution >= 2, "image folder resolution must be >= 2");
  ImageFolderResult res;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) res.class_names.push_back(e.path().filename().string());
  std::sort(res.class_names.begin(), res.class_names.end());
  if (res.class_names.empty()) throw DatasetError("image folder " + dir.string() + " has no class subdirectories");

  std::vector<float> pixels;
  std::vector<int> labels;
  const int64_t per = channels * resolution * resolution;
  for (size_t cls = 0; cls < res.class_names.size(); ++cls) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / res.class_names[cls]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DatasetError("class directory " + (dir / res.class_names[cls]).string() + " is empty");
    int64_t kept = 0;
    for (const auto& f : files) {
      if (per_class_cap > 0 && kept >= per_class_cap) break;
      auto img = read_png(f, channels);
      if (!img) {
        std::cerr << "warning: skipping undecodable image " << f.string() << "\n";
        ++res.skipped;
        continue;
      }
      const auto resized = resize_bilinear(*img, resolution, resolution);
      pixels.insert(pixels.end(), resized.span().begin(), resized.span().end());
      labels.push_back(static_cast<int>(cls));
      ++kept;
    }
  }
  const auto n = static_cast<int64_t>(labels.size());
  if (n == 0) throw DatasetError("image folder " + dir.string() + " contains no decodable images");
  res.data.images = Tensor<float>({n, channels, resolution, resolution}, std::move(pixels));
  res.data.labels = std::move(labels);
  (void)per;
  return res;
}

}  // namespace guap
