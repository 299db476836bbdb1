#include "guap/config.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace guap {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and remembers which were consumed, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(Section& s, nn::OptimizerConfig& o) {
  std::string kind = nn::to_string(o.kind);
  s.get("optimizer", kind);
  try {
    o.kind = nn::parse_optimizer(kind);
  } catch (const std::exception& e) {
    throw ConfigError(s.where("optimizer") + ": " + e.what());
  }
  s.get("learning_rate", o.learning_rate);
  s.get("weight_decay", o.weight_decay);
  s.get("momentum", o.momentum);
  s.get("beta1", o.beta1);
  s.get("beta2", o.beta2);
}

json optimizer_json(const nn::OptimizerConfig& o) {
  return {{"optimizer", nn::to_string(o.kind)}, {"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay},
          {"momentum", o.momentum},            {"beta1", o.beta1},                 {"beta2", o.beta2}};
}

template <typename F>
void checked(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ContractViolation& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get("tag", c.tag);
  top.get("output_root", c.output_root);

  if (auto d = top.child("data")) {
    d->get("format", c.data.format);
    d->get("path", c.data.path);
    d->get("heldout_path", c.data.heldout_path);
    d->get("resolution", c.data.resolution);
    d->get("per_class_cap", c.data.per_class_cap);
    d->get("train_limit", c.data.train_limit);
    d->get("heldout_limit", c.data.heldout_limit);
    if (auto s = d->child("synthetic")) {
      s->get("train_size", c.data.synthetic.train_size);
      s->get("test_size", c.data.synthetic.test_size);
      s->get("seed", c.data.synthetic.seed);
      s->get("amplitude_min", c.data.synthetic.amplitude_min);
      s->get("amplitude_max", c.data.synthetic.amplitude_max);
      s->get("pixel_noise", c.data.synthetic.pixel_noise);
      s->get("distractor_ratio", c.data.synthetic.distractor_ratio);
      s->finish();
    }
    d->finish();
  }
  if (c.data.format != "cifar10" && c.data.format != "image_folder" && c.data.format != "synthetic")
    throw ConfigError("data.format must be cifar10, image_folder or synthetic, got '" + c.data.format + "'");

  if (auto m = top.child("model")) {
    m->get("preset", c.model.preset);
    m->get("checkpoint", c.model.checkpoint);
    m->get("epochs", c.model.hyper.epochs);
    m->get("batch_size", c.model.hyper.batch_size);
    m->get("lr_decay", c.model.hyper.lr_decay);
    m->get("seed", c.model.hyper.seed);
    read_optimizer(*m, c.model.hyper.optimizer);
    m->finish();
  }
  checked("model.preset", [&] { parse_preset(c.model.preset); });

  if (auto a = top.child("attack")) {
    double eps = c.attack.budget.epsilon, tau = c.attack.budget.tau;
    a->get("epsilon", eps);
    a->get("tau", tau);
    checked("attack.epsilon/attack.tau", [&] { c.attack.budget = AttackBudget(eps, tau); });
    a->get("epochs", c.attack.epochs);
    a->get("batch_size", c.attack.batch_size);
    a->get("lr_decay", c.attack.lr_decay);
    a->get("seed", c.attack.seed);
    a->get("min_steps", c.attack.min_steps);
    a->get("validation_limit", c.attack.validation_limit);
    std::string loss = to_string(c.attack.loss), zp = to_string(c.attack.z_policy);
    a->get("loss", loss);
    a->get("z_policy", zp);
    checked("attack.loss", [&] { c.attack.loss = parse_loss_variant(loss); });
    checked("attack.z_policy", [&] { c.attack.z_policy = parse_z_policy(zp); });
    read_optimizer(*a, c.attack.optimizer);
    if (auto g = a->child("generator")) {
      g->get("base_width", c.attack.arch.base_width);
      g->get("num_resnet_blocks", c.attack.arch.num_resnet_blocks);
      g->get("verbatim_sigmoid_flow", c.attack.arch.verbatim_sigmoid_flow);
      g->finish();
    }
    a->finish();
  }
  checked("attack", [&] { c.attack.validate(); });

  top.get("perturbation", c.perturbation);
  top.get("initially_correct", c.initially_correct);
  top.get("perturbations", c.perturbations);
  top.get("checkpoints", c.checkpoints);
  top.get("epsilons", c.epsilons);
  top.get("taus", c.taus);
  top.get("sizes", c.sizes);
  top.get("export_count", c.export_count);
  top.get("export_scale", c.export_scale);
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  const auto& s = c.data.synthetic;
  json model = optimizer_json(c.model.hyper.optimizer);
  model.update({{"preset", c.model.preset},
                {"checkpoint", c.model.checkpoint},
                {"epochs", c.model.hyper.epochs},
                {"batch_size", c.model.hyper.batch_size},
                {"lr_decay", c.model.hyper.lr_decay},
                {"seed", c.model.hyper.seed}});
  json attack = optimizer_json(c.attack.optimizer);
  attack.update({{"epsilon", c.attack.budget.epsilon},
                 {"tau", c.attack.budget.tau},
                 {"epochs", c.attack.epochs},
                 {"batch_size", c.attack.batch_size},
                 {"lr_decay", c.attack.lr_decay},
                 {"seed", c.attack.seed},
                 {"min_steps", c.attack.min_steps},
                 {"validation_limit", c.attack.validation_limit},
                 {"loss", to_string(c.attack.loss)},
                 {"z_policy", to_string(c.attack.z_policy)},
                 {"generator",
                  {{"base_width", c.attack.arch.base_width},
                   {"num_resnet_blocks", c.attack.arch.num_resnet_blocks},
                   {"verbatim_sigmoid_flow", c.attack.arch.verbatim_sigmoid_flow}}}});
  const json j = {
      {"tag", c.tag},
      {"output_root", c.output_root},
      {"data",
       {{"format", c.data.format},
        {"path", c.data.path},
        {"heldout_path", c.data.heldout_path},
        {"resolution", c.data.resolution},
        {"per_class_cap", c.data.per_class_cap},
        {"train_limit", c.data.train_limit},
        {"heldout_limit", c.data.heldout_limit},
        {"synthetic",
         {{"train_size", s.train_size},
          {"test_size", s.test_size},
          {"seed", s.seed},
          {"amplitude_min", s.amplitude_min},
          {"amplitude_max", s.amplitude_max},
          {"pixel_noise", s.pixel_noise},
          {"distractor_ratio", s.distractor_ratio}}}}},
      {"model", model},
      {"attack", attack},
      {"perturbation", c.perturbation},
      {"initially_correct", c.initially_correct},
      {"perturbations", c.perturbations},
      {"checkpoints", c.checkpoints},
      {"epsilons", c.epsilons},
      {"taus", c.taus},
      {"sizes", c.sizes},
      {"export_count", c.export_count},
      {"export_scale", c.export_scale},
  };
  return j.dump(2);
}

AttackBudget budget_preset(const std::string& name) {
  if (name == "v1") return {0.04, 0.0};
  if (name == "v2") return {0.03, 0.1};
  if (name == "v3") return {0.04, 0.1};
  throw ConfigError("unknown attack preset '" + name + "' (expected v1, v2 or v3)");
}

std::pair<LabeledDataset, LabeledDataset> load_datasets(const DataSection& d) {
  std::pair<LabeledDataset, LabeledDataset> out;
  if (d.format == "synthetic") {
    out = {make_synthetic(d.synthetic, Split::train), make_synthetic(d.synthetic, Split::heldout)};
  } else {
    if (d.path.empty()) throw ConfigError("data.path is required for format '" + d.format + "'");
    if (!std::filesystem::is_directory(d.path)) throw ConfigError("data.path: directory not found: " + d.path);
    if (d.format == "cifar10") {
      out = ingest_cifar10(d.path);
    } else {
      if (d.heldout_path.empty()) throw ConfigError("data.heldout_path is required for format 'image_folder'");
      if (!std::filesystem::is_directory(d.heldout_path))
        throw ConfigError("data.heldout_path: directory not found: " + d.heldout_path);
      out.first = ingest_image_folder(d.path, d.resolution, d.per_class_cap).data;
      out.second = ingest_image_folder(d.heldout_path, d.resolution, d.per_class_cap).data;
      out.first.split = Split::train;
      out.second.split = Split::heldout;
    }
  }
  if (d.train_limit > 0 && d.train_limit < out.first.size()) out.first = out.first.slice(0, d.train_limit);
  if (d.heldout_limit > 0 && d.heldout_limit < out.second.size()) out.second = out.second.slice(0, d.heldout_limit);
  return out;
}

std::filesystem::path make_run_dir(const std::string& root, const std::string& tag) {
  std::string base = root;
  if (const char* env = std::getenv("GUAP_OUTPUT_ROOT"); env && *env) base = env;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%d-%H%M%S");
  const std::filesystem::path first = std::filesystem::path(base) / (stamp.str() + "-" + tag);
  std::filesystem::path dir = first;
  for (int k = 2; std::filesystem::exists(dir); ++k) dir = first.string() + "-" + std::to_string(k);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace guap
