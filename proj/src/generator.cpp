#include "guap/generator.hpp"

#include <json.hpp>
#include <random>

namespace guap {

using nlohmann::json;

void GeneratorArch::validate() const {
  require(in_channels == 1 || in_channels == 3, "generator in_channels must be 1 or 3");
  require(base_width >= 8, "generator base_width must be >= 8");
  require(num_resnet_blocks >= 1, "generator needs at least one residual block");
  require(height >= 4 && width >= 4 && height % 4 == 0 && width % 4 == 0,
          "generator image dims must be positive multiples of 4, got " + std::to_string(height) + "x" +
              std::to_string(width));
}

std::string GeneratorArch::to_json() const {
  return json{{"in_channels", in_channels}, {"base_width", base_width}, {"num_resnet_blocks", num_resnet_blocks},
              {"height", height},           {"width", width},           {"verbatim_sigmoid_flow", verbatim_sigmoid_flow}}
      .dump();
}

GeneratorArch GeneratorArch::from_json(const std::string& text) {
  const json j = json::parse(text);
  GeneratorArch a;
  a.in_channels = j.at("in_channels").get<int64_t>();
  a.base_width = j.at("base_width").get<int64_t>();
  a.num_resnet_blocks = j.at("num_resnet_blocks").get<int64_t>();
  a.height = j.at("height").get<int64_t>();
  a.width = j.at("width").get<int64_t>();
  a.verbatim_sigmoid_flow = j.at("verbatim_sigmoid_flow").get<bool>();
  a.validate();
  return a;
}

template <typename T>
SeedPattern<T> SeedPattern<T>::sample(int64_t c, int64_t h, int64_t w, uint64_t seed) {
  SeedPattern<T> z{Tensor<T>({c, h, w}), seed};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : z.data.span()) v = static_cast<T>(nd(rng));
  return z;
}

template <typename T>
io::Digest SeedPattern<T>::digest() const {
  const auto f = data.template cast<float>();
  return io::sha256_of(f.span());
}

namespace {

template <typename T>
nn::Sequential<T> decoder(const std::string& prefix, int64_t w, int64_t out_ch, bool tanh_head) {
  nn::Sequential<T> d;
  d.template add<nn::ConvTranspose2d<T>>(prefix + ".deconv1", 4 * w, 2 * w, nn::ConvGeometry{3, 2, 1}, 1);
  d.template add<nn::InstanceNorm2d<T>>(prefix + ".norm1", 2 * w);
  d.template add<nn::ReLU<T>>();
  d.template add<nn::ConvTranspose2d<T>>(prefix + ".deconv2", 2 * w, w, nn::ConvGeometry{3, 2, 1}, 1);
  d.template add<nn::InstanceNorm2d<T>>(prefix + ".norm2", w);
  d.template add<nn::ReLU<T>>();
  d.template add<nn::ConvTranspose2d<T>>(prefix + ".deconv3", w, w, nn::ConvGeometry{3, 1, 1}, 0);
  d.template add<nn::InstanceNorm2d<T>>(prefix + ".norm3", w);
  d.template add<nn::ReLU<T>>();
  d.template add<nn::Conv2d<T>>(prefix + ".head", w, out_ch, nn::ConvGeometry{3, 1, 1});
  if (tanh_head)
    d.template add<nn::Tanh<T>>();
  else
    d.template add<nn::Sigmoid<T>>();
  return d;
}

}  // namespace

template <typename T>
Generator<T>::Generator(GeneratorArch arch) : arch_(arch) {
  arch_.validate();
  const int64_t w = arch_.base_width;
  trunk_.template add<nn::Conv2d<T>>("enc1", arch_.in_channels, w, nn::ConvGeometry{3, 1, 1});
  trunk_.template add<nn::InstanceNorm2d<T>>("enc1_norm", w);
  trunk_.template add<nn::ReLU<T>>();
  trunk_.template add<nn::Conv2d<T>>("enc2", w, 2 * w, nn::ConvGeometry{3, 2, 1});
  trunk_.template add<nn::InstanceNorm2d<T>>("enc2_norm", 2 * w);
  trunk_.template add<nn::ReLU<T>>();
  trunk_.template add<nn::Conv2d<T>>("enc3", 2 * w, 4 * w, nn::ConvGeometry{3, 2, 1});
  trunk_.template add<nn::InstanceNorm2d<T>>("enc3_norm", 4 * w);
  trunk_.template add<nn::ReLU<T>>();
  for (int64_t b = 0; b < arch_.num_resnet_blocks; ++b) {
    const std::string p = "res" + std::to_string(b);
    nn::Sequential<T> body;
    body.template add<nn::Conv2d<T>>(p + ".conv1", 4 * w, 4 * w, nn::ConvGeometry{3, 1, 1});
    body.template add<nn::InstanceNorm2d<T>>(p + ".norm1", 4 * w);
    body.template add<nn::ReLU<T>>();
    body.template add<nn::Conv2d<T>>(p + ".conv2", 4 * w, 4 * w, nn::ConvGeometry{3, 1, 1});
    body.template add<nn::InstanceNorm2d<T>>(p + ".norm2", 4 * w);
    trunk_.template add<nn::Residual<T>>(std::move(body));
  }
  flow_head_ = decoder<T>("flow", w, 2, false);
  noise_head_ = decoder<T>("noise", w, arch_.in_channels, true);
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(const SeedPattern<T>& z, nn::Tape<T>* tape) const {
  require(z.data.shape() == Shape({arch_.in_channels, arch_.height, arch_.width}),
          "seed pattern shape " + shape_str(z.data.shape()) + " does not match generator");
  const auto x = z.data.reshaped({1, arch_.in_channels, arch_.height, arch_.width});
  const auto features = trunk_.forward(x, tape);
  auto flow = flow_head_.forward(features, tape);
  auto noise = noise_head_.forward(features, tape);
  if (!all_finite(flow.span()) || !all_finite(noise.span()))
    throw TrainingFault("generator produced non-finite outputs");
  if (!arch_.verbatim_sigmoid_flow)
    for (auto& v : flow.span()) v = T(2) * v - T(1);
  return {NoiseField<T>(noise.reshaped({arch_.in_channels, arch_.height, arch_.width})),
          FlowField<T>(flow.reshaped({2, arch_.height, arch_.width}))};
}

template <typename T>
void Generator<T>::backward(const NoiseField<T>& grad_noise, const FlowField<T>& grad_flow, nn::Tape<T>& tape,
                            nn::Gradients<T>& grads) const {
  const Shape noise_shape{1, arch_.in_channels, arch_.height, arch_.width};
  const Shape flow_shape{1, 2, arch_.height, arch_.width};
  auto g_features = noise_head_.backward(grad_noise.tensor().reshaped(noise_shape), tape, &grads);
  auto g_flow = grad_flow.tensor().reshaped(flow_shape);
  if (!arch_.verbatim_sigmoid_flow) g_flow *= T(2);
  g_features += flow_head_.backward(g_flow, tape, &grads);
  trunk_.backward(g_features, tape, &grads);
}

template <typename T>
std::vector<nn::Parameter<T>*> Generator<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  trunk_.parameters(out);
  flow_head_.parameters(out);
  noise_head_.parameters(out);
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> Generator<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  trunk_.parameters(out);
  flow_head_.parameters(out);
  noise_head_.parameters(out);
  return out;
}

template <typename T>
io::Digest Generator<T>::parameter_digest() const {
  io::ByteWriter w;
  for (const auto* p : parameters()) {
    w.str(p->name);
    const auto f = p->value.template cast<float>();
    w.f32s(f.span());
  }
  return io::sha256(w.buffer());
}

template <typename T>
template <typename U>
Generator<U> Generator<T>::cast() const {
  Generator<U> out(arch_);
  auto dst = out.parameters();
  const auto src = parameters();
  for (size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

template <typename T>
Generator<T> init_generator(const GeneratorArch& arch, uint64_t seed) {
  Generator<T> g(arch);
  std::mt19937_64 rng(seed);
  nn::initialize(g.parameters(), nn::InitScheme::normal_002, rng);
  return g;
}

void save_generator(const std::filesystem::path& path, const Generator<float>& g) {
  io::NamedTensors nt;
  nt.metadata = json{{"kind", "generator"}, {"arch", json::parse(g.arch().to_json())}}.dump();
  for (const auto* p : g.parameters()) nt.tensors.emplace_back(p->name, p->value);
  io::save_named_tensors(path, nt);
}

Generator<float> load_generator(const std::filesystem::path& path) {
  auto nt = io::load_named_tensors(path);
  const json meta = json::parse(nt.metadata);
  if (meta.value("kind", "") != "generator")
    throw io::FormatError(path.string() + ": checkpoint is not a generator");
  Generator<float> g(GeneratorArch::from_json(meta.at("arch").dump()));
  auto params = g.parameters();
  if (params.size() != nt.tensors.size())
    throw io::FormatError(path.string() + ": parameter count mismatch with architecture");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = nt.tensors[i];
    if (name != params[i]->name || t.shape() != params[i]->value.shape())
      throw io::FormatError(path.string() + ": unexpected tensor '" + name + "'");
    params[i]->value = std::move(t);
  }
  return g;
}

template struct SeedPattern<float>;
template struct SeedPattern<double>;
template class Generator<float>;
template class Generator<double>;
template Generator<double> Generator<float>::cast<double>() const;
template Generator<float> Generator<double>::cast<float>() const;
template Generator<float> init_generator<float>(const GeneratorArch&, uint64_t);
template Generator<double> init_generator<double>(const GeneratorArch&, uint64_t);

}  // namespace guap
