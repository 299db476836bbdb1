#include "guap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "guap/image_io.hpp"

namespace guap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Outcome {
  std::vector<int> clean, adv;
};

Outcome predict_pair(const UniversalPerturbation& p, const Tensor<float>& images, const TargetModel& model) {
  require(images.rank() == 4 && images.dim(0) > 0, "evaluation needs a non-empty (n,c,h,w) image set");
  return {model.predict(images), model.predict(p.apply(images))};
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

double attack_success_rate(const UniversalPerturbation& p, const LabeledDataset& data, const TargetModel& model,
                           AsrMode mode) {
  require(data.size() > 0, "attack_success_rate: empty dataset");
  const auto o = predict_pair(p, data.images, model);
  int64_t changed = 0, total = 0;
  for (int64_t i = 0; i < data.size(); ++i) {
    if (mode == AsrMode::initially_correct && o.clean[i] != data.labels[i]) continue;
    ++total;
    changed += o.adv[i] != o.clean[i];
  }
  return total == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(total);
}

L2Report l2_report(const UniversalPerturbation& p, const Tensor<float>& images) {
  require(images.rank() == 4 && images.dim(0) > 0, "l2_report needs a non-empty (n,c,h,w) image set");
  const auto adv = p.apply(images);
  const int64_t n = images.dim(0), per = images.size() / n;
  L2Report r;
  r.values.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t k = i * per; k < (i + 1) * per; ++k) {
      const double d = std::round(255.0 * adv[k]) - std::round(255.0 * images[k]);
      s += d * d;
    }
    r.values[i] = std::sqrt(s);
  }
  double sum = 0.0;
  for (double v : r.values) sum += v;
  r.mean = sum / static_cast<double>(n);
  auto sorted = r.values;
  std::sort(sorted.begin(), sorted.end());
  r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.max = sorted.back();
  return r;
}

EvalReport evaluate(const UniversalPerturbation& p, const LabeledDataset& data, const TargetModel& model) {
  require(data.size() > 0, "evaluate: empty dataset");
  const auto o = predict_pair(p, data.images, model);
  EvalReport r;
  const auto classes = static_cast<size_t>(model.num_classes());
  std::vector<int64_t> per_total(classes, 0), per_changed(classes, 0);
  int64_t changed = 0, correct = 0, adv_correct = 0, changed_correct = 0;
  for (int64_t i = 0; i < data.size(); ++i) {
    const bool flip = o.adv[i] != o.clean[i];
    const bool ok = o.clean[i] == data.labels[i];
    changed += flip;
    correct += ok;
    changed_correct += ok && flip;
    adv_correct += o.adv[i] == data.labels[i];
    const auto y = static_cast<size_t>(data.labels[i]);
    if (y < classes) {
      ++per_total[y];
      per_changed[y] += flip;
    }
  }
  const auto n = static_cast<double>(data.size());
  r.asr = static_cast<double>(changed) / n;
  r.clean_accuracy = static_cast<double>(correct) / n;
  r.adversarial_accuracy = static_cast<double>(adv_correct) / n;
  r.asr_initially_correct = correct ? static_cast<double>(changed_correct) / static_cast<double>(correct) : 0.0;
  r.per_class_asr.resize(classes);
  for (size_t k = 0; k < classes; ++k)
    r.per_class_asr[k] = per_total[k] ? static_cast<double>(per_changed[k]) / static_cast<double>(per_total[k]) : kNaN;
  r.l2 = l2_report(p, data.images);
  return r;
}

std::vector<double> TransferMatrix::column_average(bool include_diagonal) const {
  std::vector<double> out(victims.size(), kNaN);
  for (size_t j = 0; j < victims.size(); ++j) {
    double s = 0.0;
    int cnt = 0;
    for (size_t i = 0; i < sources.size(); ++i) {
      if (!include_diagonal && i == j) continue;
      if (!asr[i][j]) continue;
      s += *asr[i][j];
      ++cnt;
    }
    if (cnt) out[j] = s / cnt;
  }
  return out;
}

TransferMatrix transfer_matrix(const std::vector<UniversalPerturbation>& perts,
                               const std::vector<const TargetModel*>& models, const LabeledDataset& data) {
  require(!perts.empty() && !models.empty(), "transfer_matrix: need at least one perturbation and one model");
  require(data.size() > 0, "transfer_matrix: empty dataset");
  TransferMatrix m;
  for (const auto& p : perts) m.sources.push_back(p.target_id);
  for (const auto* mod : models) m.victims.push_back(mod->id());
  m.asr.assign(perts.size(), std::vector<std::optional<double>>(models.size()));
  for (size_t i = 0; i < perts.size(); ++i)
    for (size_t j = 0; j < models.size(); ++j) {
      try {
        m.asr[i][j] = attack_success_rate(perts[i], data, *models[j]);
      } catch (const std::exception& e) {
        m.errors.push_back("cell (" + m.sources[i] + ", " + m.victims[j] + "): " + e.what());
      }
    }
  return m;
}

AblationGrid ablation_grid(const LabeledDataset& train_set, const LabeledDataset& heldout, const TargetModel& model,
                           const std::vector<double>& epsilons, const std::vector<double>& taus,
                           const TrainConfig& cfg, const CellHook& on_cell) {
  require(!epsilons.empty() && !taus.empty(), "ablation_grid: empty epsilon or tau list");
  AblationGrid g{epsilons, taus, std::vector<std::vector<double>>(taus.size(), std::vector<double>(epsilons.size(), kNaN)),
                 {}};
  for (size_t t = 0; t < taus.size(); ++t)
    for (size_t e = 0; e < epsilons.size(); ++e) {
      try {
        const AttackBudget budget(epsilons[e], taus[t]);
        double asr = 0.0;
        // Nothing to learn for the identity cell; its ASR is 0 by definition.
        if (!budget.is_identity()) {
          TrainConfig c = cfg;
          c.budget = budget;
          const auto res = train(train_set, model, c);
          const auto p = freeze_perturbation(res.generator, res.deploy_z, budget, model.id());
          asr = attack_success_rate(p, heldout, model);
        }
        g.asr[t][e] = asr;
        if (on_cell) on_cell(epsilons[e], taus[t], asr);
      } catch (const std::exception& ex) {
        g.errors.push_back("cell (eps=" + cell(epsilons[e]) + ", tau=" + cell(taus[t]) + "): " + ex.what());
      }
    }
  return g;
}

std::vector<SamplePoint> sample_size_study(const LabeledDataset& train_set, const LabeledDataset& heldout,
                                           const TargetModel& model, const std::vector<int64_t>& sizes,
                                           const TrainConfig& cfg,
                                           const std::function<void(const SamplePoint&)>& on_point) {
  require(!sizes.empty(), "sample_size_study: no sizes");
  require(std::is_sorted(sizes.begin(), sizes.end()), "sample_size_study: sizes must be ascending");
  require(sizes.front() >= 1 && sizes.back() <= train_set.size(),
          "sample_size_study: size " + std::to_string(sizes.back()) + " exceeds dataset of " +
              std::to_string(train_set.size()));
  std::vector<SamplePoint> out;
  for (int64_t n : sizes) {
    const auto subset = train_set.slice(0, n);
    const auto res = train(subset, model, cfg);
    const auto p = freeze_perturbation(res.generator, res.deploy_z, cfg.budget, model.id());
    out.push_back({n, attack_success_rate(p, heldout, model), io::sha256_of(subset.images.span())});
    if (on_point) on_point(out.back());
  }
  return out;
}

// ------------------------------------------------------------------ reports

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
  auto out = open_csv(path);
  out << "metric,value\n";
  out << "asr," << cell(r.asr) << "\n";
  out << "asr_initially_correct," << cell(r.asr_initially_correct) << "\n";
  out << "clean_accuracy," << cell(r.clean_accuracy) << "\n";
  out << "adversarial_accuracy," << cell(r.adversarial_accuracy) << "\n";
  out << "l2_mean," << cell(r.l2.mean) << "\n";
  out << "l2_median," << cell(r.l2.median) << "\n";
  out << "l2_max," << cell(r.l2.max) << "\n";
  for (size_t k = 0; k < r.per_class_asr.size(); ++k) out << "asr_class_" << k << "," << cell(r.per_class_asr[k]) << "\n";
}

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "epoch,mean_loss,train_asr,validation_asr,seconds\n";
  for (const auto& e : log.epochs)
    out << e.epoch << "," << cell(e.mean_loss) << "," << cell(e.train_asr) << "," << cell(e.validation_asr) << ","
        << cell(e.seconds) << "\n";
}

void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& m) {
  auto out = open_csv(path);
  out << "source";
  for (const auto& v : m.victims) out << "," << v;
  out << "\n";
  for (size_t i = 0; i < m.sources.size(); ++i) {
    out << m.sources[i];
    for (const auto& c : m.asr[i]) out << "," << (c ? cell(*c) : "invalid");
    out << "\n";
  }
  out << "Average (incl. diagonal)";
  for (double v : m.column_average(true)) out << "," << cell(v);
  out << "\nAverage (excl. diagonal)";
  for (double v : m.column_average(false)) out << "," << cell(v);
  out << "\n";
}

void write_grid_csv(const std::filesystem::path& path, const AblationGrid& g) {
  auto out = open_csv(path);
  out << "epsilon,tau,asr\n";
  for (size_t t = 0; t < g.taus.size(); ++t)
    for (size_t e = 0; e < g.epsilons.size(); ++e)
      out << cell(g.epsilons[e]) << "," << cell(g.taus[t]) << "," << cell(g.asr[t][e]) << "\n";
}

void write_sample_csv(const std::filesystem::path& path, const std::vector<SamplePoint>& pts) {
  auto out = open_csv(path);
  out << "size,asr,subset_sha256\n";
  for (const auto& p : pts) out << p.size << "," << cell(p.asr) << "," << io::to_hex(p.subset_digest) << "\n";
}

void write_grid_heatmap(const std::filesystem::path& path, const AblationGrid& g) {
  constexpr int64_t kCell = 24;
  const auto rows = static_cast<int64_t>(g.taus.size()), cols = static_cast<int64_t>(g.epsilons.size());
  Tensor<float> img({3, rows * kCell, cols * kCell});
  const int64_t H = rows * kCell, W = cols * kCell;
  for (int64_t t = 0; t < rows; ++t)
    for (int64_t e = 0; e < cols; ++e) {
      const double v = g.asr[t][e];
      // blue -> yellow ramp; grey marks a failed cell
      float rgb[3] = {0.5f, 0.5f, 0.5f};
      if (!std::isnan(v)) {
        const auto a = static_cast<float>(std::clamp(v, 0.0, 1.0));
        rgb[0] = a;
        rgb[1] = 0.2f + 0.7f * a;
        rgb[2] = 0.6f * (1.0f - a);
      }
      for (int64_t i = 0; i < kCell; ++i)
        for (int64_t j = 0; j < kCell; ++j) {
          const bool border = i == 0 || j == 0;
          for (int k = 0; k < 3; ++k) img[(k * H + t * kCell + i) * W + e * kCell + j] = border ? 1.0f : rgb[k];
        }
    }
  write_png(path, img);
}

void write_curve_png(const std::filesystem::path& path, const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size() && !xs.empty(), "write_curve_png: need matching non-empty series");
  constexpr int64_t H = 200, W = 300, M = 12;
  Tensor<float> img({3, H, W}, 1.0f);
  auto put = [&](int64_t i, int64_t j, float r, float gg, float b) {
    if (i < 0 || j < 0 || i >= H || j >= W) return;
    img[(0 * H + i) * W + j] = r;
    img[(1 * H + i) * W + j] = gg;
    img[(2 * H + i) * W + j] = b;
  };
  for (int64_t j = M; j < W - M; ++j) put(H - M, j, 0, 0, 0);
  for (int64_t i = M; i < H - M; ++i) put(i, M, 0, 0, 0);
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const double ymax = std::max(1e-12, *std::max_element(ys.begin(), ys.end()));
  const double xspan = std::max(1e-12, *xmax - *xmin);
  auto px = [&](size_t k) {
    return std::pair{static_cast<double>(H - M) - (ys[k] / ymax) * (H - 2 * M),
                     M + (xs[k] - *xmin) / xspan * (W - 2 * M)};
  };
  for (size_t k = 0; k < xs.size(); ++k) {
    const auto [y0, x0] = px(k);
    for (int di = -2; di <= 2; ++di)
      for (int dj = -2; dj <= 2; ++dj) put(std::lround(y0) + di, std::lround(x0) + dj, 0.8f, 0.1f, 0.1f);
    if (k + 1 == xs.size()) break;
    const auto [y1, x1] = px(k + 1);
    const int steps = static_cast<int>(std::max(std::abs(y1 - y0), std::abs(x1 - x0))) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double a = static_cast<double>(s) / steps;
      put(std::lround(y0 + a * (y1 - y0)), std::lround(x0 + a * (x1 - x0)), 0.1f, 0.2f, 0.8f);
    }
  }
  write_png(path, img);
}

void export_triplets(const std::filesystem::path& dir, const UniversalPerturbation& p, const Tensor<float>& images,
                     int64_t count, int64_t scale) {
  require(images.rank() == 4, "export_triplets expects (n,c,h,w)");
  count = std::min(count, images.dim(0));
  std::filesystem::create_directories(dir);
  const int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor<float> batch({count, c, h, w});
  std::copy_n(images.data(), batch.size(), batch.data());
  const auto warped = warp_tensor(batch, p.flow);
  const auto final_adv = p.apply(batch);
  const int64_t per = c * h * w;
  auto one = [&](const Tensor<float>& t, int64_t i) {
    return Tensor<float>({c, h, w}, std::vector<float>(t.data() + i * per, t.data() + (i + 1) * per));
  };
  for (int64_t i = 0; i < count; ++i) {
    const std::string stem = "sample_" + std::to_string(i);
    write_png(dir / (stem + "_clean.png"), one(batch, i), scale);
    write_png(dir / (stem + "_warped.png"), one(warped, i), scale);
    write_png(dir / (stem + "_final.png"), one(final_adv, i), scale);
  }
}

}  // namespace guap
