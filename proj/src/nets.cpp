#include "volgen/nets.hpp"

#include <cmath>
#include <iomanip>
#include "json.hpp"
#include <sstream>
#include <stdexcept>

namespace volgen::nets {

using ag::ConvParams;

template <typename T>
ConvWeights3D<T>::ConvWeights3D(Tensor<T> v) : values(std::move(v)) {
  if (values.rank() != 5)
    throw std::invalid_argument("conv weights need rank 5, got " + shape_str(values.shape()));
  for (T x : values.vec())
    if (!std::isfinite(static_cast<double>(x)))
      throw std::invalid_argument("conv weights contain a non-finite value");
}

template <typename T>
ConvWeights3D<T> modulate(const ConvWeights3D<T>& w, std::span<const T> style) {
  if (static_cast<int64_t>(style.size()) != w.in_channels())
    throw std::invalid_argument("modulate: style length " + std::to_string(style.size()) +
                                " != input channels " + std::to_string(w.in_channels()));
  Tensor<T> out = w.values;
  const int64_t taps = w.taps();
  for (int64_t j = 0; j < w.out_channels(); ++j)
    for (int64_t i = 0; i < w.in_channels(); ++i) {
      T* p = out.data() + (j * w.in_channels() + i) * taps;
      for (int64_t k = 0; k < taps; ++k) p[k] *= style[static_cast<size_t>(i)];
    }
  return ConvWeights3D<T>(std::move(out));
}

template <typename T>
ConvWeights3D<T> demodulate(const ConvWeights3D<T>& w, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("demodulate: epsilon must be positive");
  Tensor<T> out = w.values;
  const int64_t per_out = w.in_channels() * w.taps();
  for (int64_t j = 0; j < w.out_channels(); ++j) {
    T* p = out.data() + j * per_out;
    double ss = 0.0;
    for (int64_t k = 0; k < per_out; ++k) ss += static_cast<double>(p[k]) * p[k];
    const double inv = 1.0 / std::sqrt(ss + eps);
    for (int64_t k = 0; k < per_out; ++k) p[k] = static_cast<T>(p[k] * inv);
  }
  return ConvWeights3D<T>(std::move(out));
}

namespace {

ConvParams conv_params(const Shape& w, const ModConvSpec& spec) {
  ConvParams p;
  p.stride = spec.stride;
  for (int a = 0; a < 3; ++a) p.pad[a] = spec.padding[a] < 0 ? w[2 + a] / 2 : spec.padding[a];
  return p;
}

template <typename T>
Var<T> channel_view(const Var<T>& v) {
  // (C) -> (1, C, 1, 1, 1) for broadcasting over NCDHW
  return ag::reshape(v, Shape{1, v.numel(), 1, 1, 1});
}

template <typename T>
Var<T> gained(const Var<T>& w, double gain) {
  return gain == 1.0 ? w : ag::scale(w, static_cast<T>(gain));
}

// Fully connected layer with runtime weight gain lr_mul / sqrt(fan_in) and bias gain lr_mul.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b, double lr_mul = 1.0) {
  return ag::add(ag::matmul(x, ag::transpose(gained(w, weight_gain(w.shape(), lr_mul)))), gained(b, lr_mul));
}

// Unmodulated conv with runtime weight gain 1 / sqrt(fan_in).
template <typename T>
Var<T> conv(const Var<T>& x, const Var<T>& w, int64_t groups = 1) {
  return ag::conv3d(x, gained(w, weight_gain(w.shape())), ConvParams::same(w.shape(), groups));
}

template <typename T>
Var<T> lrelu(const Var<T>& x) {
  return ag::leaky_relu(x, static_cast<T>(kLeakySlope));
}

}  // namespace

template <typename T>
Var<T> modulated_conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& styles,
                        const ModConvSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5 || styles.shape().size() != 2)
    throw std::invalid_argument("modulated_conv3d: expects NCDHW input, rank-5 weight, (N,C) styles");
  if (styles.shape()[0] != xs[0] || styles.shape()[1] != xs[1] || ws[1] != xs[1])
    throw std::invalid_argument("modulated_conv3d: channel mismatch between input " +
                                shape_str(xs) + ", weight " + shape_str(ws) + " and styles " +
                                shape_str(styles.shape()));
  if (!(spec.epsilon > 0)) throw std::invalid_argument("modulated_conv3d: epsilon must be > 0");
  const int64_t n = xs[0], cin = xs[1], cout = ws[0];
  auto scaled = ag::mul(x, ag::reshape(styles, Shape{n, cin, 1, 1, 1}));
  auto y = ag::conv3d(scaled, w, conv_params(ws, spec));
  if (!spec.demodulate) return y;
  // sum_{i,k} (s_i w_jik)^2 = sum_i s_i^2 * sum_k w_jik^2
  auto wsq = ag::reshape(ag::sum_to(ag::square(w), Shape{cout, cin, 1, 1, 1}), Shape{cout, cin});
  auto energy = ag::matmul(ag::square(styles), ag::transpose(wsq));
  auto coeff = ag::rsqrt(ag::add_scalar(energy, static_cast<T>(spec.epsilon)));
  return ag::mul(y, ag::reshape(coeff, Shape{n, cout, 1, 1, 1}));
}

template <typename T>
std::pair<Var<T>, Var<T>> channel_split(const Var<T>& x) {
  const int64_t c = x.shape().at(1);
  if (c % 2 != 0)
    throw std::invalid_argument("channel_split: odd channel count " + std::to_string(c));
  return {ag::slice_channels(x, 0, c / 2), ag::slice_channels(x, c / 2, c / 2)};
}

std::vector<int64_t> shuffle_permutation(int64_t channels, int64_t groups) {
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("channel_shuffle: " + std::to_string(channels) +
                                " channels not divisible by " + std::to_string(groups) +
                                " groups");
  const int64_t per = channels / groups;
  std::vector<int64_t> perm(static_cast<size_t>(channels));
  for (int64_t j = 0; j < channels; ++j) perm[static_cast<size_t>(j)] = (j % groups) * per + j / groups;
  return perm;
}

template <typename T>
Var<T> channel_shuffle(const Var<T>& x, int64_t groups) {
  return ag::permute_channels(x, shuffle_permutation(x.shape().at(1), groups));
}

template <typename T>
Var<T> minibatch_stddev(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[0] < 1) throw std::invalid_argument("minibatch_stddev expects NCDHW, N >= 1");
  const T inv_n = T{1} / static_cast<T>(s[0]);
  const Shape stat_shape{1, s[1], s[2], s[3], s[4]};
  auto mu = ag::scale(ag::sum_to(x, stat_shape), inv_n);
  auto dev = ag::sub(x, mu);
  auto var = ag::scale(ag::sum_to(ag::square(dev), stat_shape), inv_n);
  auto stat = ag::mean(ag::safe_sqrt(var));
  auto chan = ag::broadcast_to(ag::reshape(stat, Shape{1, 1, 1, 1, 1}),
                               Shape{s[0], 1, s[2], s[3], s[4]});
  return ag::concat_channels(std::vector<Var<T>>{x, chan});
}

template <typename T>
Var<T> split_shuffle_disc_block(const Var<T>& x, const Var<T>& w_a, const Var<T>& w_b,
                                bool shuffle) {
  auto [xa, xb] = channel_split(x);
  auto ya = ag::conv3d(xa, w_a, ConvParams::same(w_a.shape()));
  auto yb = ag::conv3d(xb, w_b, ConvParams::same(w_b.shape()));
  auto y = ag::concat_channels(std::vector<Var<T>>{ya, yb});
  return shuffle ? channel_shuffle(y, 2) : y;
}

template <typename T>
Var<T> split_shuffle_gen_block(const Var<T>& x, const Var<T>& w_a, const Var<T>& w_b,
                               const Var<T>& style_a, const Var<T>& style_b, bool shuffle) {
  auto [xa, xb] = channel_split(x);
  auto ya = modulated_conv3d(xa, w_a, style_a);
  auto yb = modulated_conv3d(xb, w_b, style_b);
  auto y = ag::concat_channels(std::vector<Var<T>>{ya, yb});
  return shuffle ? channel_shuffle(y, 2) : y;
}

// ---------------------------------------------------------------------------

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::Baseline: return "baseline";
    case Architecture::GroupD: return "group_d";
    case Architecture::DepthwiseD: return "depthwise_d";
    case Architecture::SplitShuffleD: return "split_shuffle_d";
    case Architecture::Split: return "split";
    case Architecture::SplitShuffle: return "split_shuffle";
  }
  return "baseline";
}

Architecture parse_architecture(const std::string& s) {
  for (auto a : all_architectures())
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown model variant '" + s +
                              "' (expected baseline, group_d, depthwise_d, split_shuffle_d, "
                              "split or split_shuffle)");
}

const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> all{Architecture::Baseline,      Architecture::GroupD,
                                             Architecture::DepthwiseD,    Architecture::SplitShuffleD,
                                             Architecture::Split,         Architecture::SplitShuffle};
  return all;
}

std::string display_name(Architecture a) {
  switch (a) {
    case Architecture::Baseline: return "Baseline";
    case Architecture::GroupD: return "Group-D";
    case Architecture::DepthwiseD: return "Depthwise-D";
    case Architecture::SplitShuffleD: return "Split&Shuffle-D";
    case Architecture::Split: return "Split";
    case Architecture::SplitShuffle: return "Split&Shuffle";
  }
  return "Baseline";
}

GenBlockKind generator_block(Architecture a) {
  switch (a) {
    case Architecture::Split: return GenBlockKind::Split;
    case Architecture::SplitShuffle: return GenBlockKind::SplitShuffle;
    default: return GenBlockKind::Baseline;
  }
}

DiscBlockKind discriminator_block(Architecture a) {
  switch (a) {
    case Architecture::Baseline: return DiscBlockKind::Baseline;
    case Architecture::GroupD: return DiscBlockKind::Group;
    case Architecture::DepthwiseD: return DiscBlockKind::Depthwise;
    case Architecture::SplitShuffleD: return DiscBlockKind::SplitShuffle;
    case Architecture::Split: return DiscBlockKind::Split;
    case Architecture::SplitShuffle: return DiscBlockKind::SplitShuffle;
  }
  return DiscBlockKind::Baseline;
}

Index3 GeneratorConfig::output_shape() const {
  const auto f = scale_factor();
  Index3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = base_shape[a];
    for (int k = 0; k < n_doublings; ++k) out[a] *= f[a];
  }
  return out;
}

void GeneratorConfig::validate() const {
  for (auto e : base_shape)
    if (e < 1) throw std::invalid_argument("generator base shape must be positive");
  if (planar && base_shape[0] != 1) throw std::invalid_argument("planar generator needs base depth 1");
  if (n_doublings < 0) throw std::invalid_argument("generator n_doublings must be >= 0");
  if (channels < 1 || latent_dim < 1 || mapping_dim < 1 || mapping_layers < 1)
    throw std::invalid_argument("generator dimensions must be positive");
  if (block != GenBlockKind::Baseline && channels % 2 != 0)
    throw std::invalid_argument("split generator blocks need an even channel count");
}

Index3 DiscriminatorConfig::base_shape() const {
  const auto f = scale_factor();
  Index3 out = input_shape;
  for (int a = 0; a < 3; ++a)
    for (int k = 0; k < n_halvings; ++k) out[a] /= f[a];
  return out;
}

void DiscriminatorConfig::validate() const {
  const auto f = scale_factor();
  if (planar && input_shape[0] != 1) throw std::invalid_argument("planar discriminator needs depth 1");
  for (int a = 0; a < 3; ++a) {
    int64_t e = input_shape[a];
    if (e < 1) throw std::invalid_argument("discriminator input extents must be positive");
    for (int k = 0; k < n_halvings; ++k) {
      if (e % f[a] != 0)
        throw std::invalid_argument("discriminator input " + std::to_string(input_shape[a]) +
                                    " not divisible by 2^" + std::to_string(n_halvings));
      e /= f[a];
    }
  }
  if (channels < 1) throw std::invalid_argument("discriminator channels must be positive");
  if (block == DiscBlockKind::Group && (groups < 1 || channels % groups != 0))
    throw std::invalid_argument("discriminator channels not divisible by groups");
  if ((block == DiscBlockKind::Split || block == DiscBlockKind::SplitShuffle) && channels % 2 != 0)
    throw std::invalid_argument("split discriminator blocks need an even channel count");
}

ModelConfig make_model_config(Architecture arch, Index3 base_shape, int n_doublings,
                              int64_t channels, int64_t mapping_dim, bool planar) {
  ModelConfig m;
  m.architecture = arch;
  if (planar) base_shape[0] = 1;
  m.generator.base_shape = base_shape;
  m.generator.n_doublings = n_doublings;
  m.generator.channels = channels;
  m.generator.mapping_dim = mapping_dim;
  m.generator.latent_dim = mapping_dim;
  m.generator.block = generator_block(arch);
  m.generator.planar = planar;
  m.discriminator.input_shape = m.generator.output_shape();
  m.discriminator.n_halvings = n_doublings;
  m.discriminator.channels = channels;
  m.discriminator.block = discriminator_block(arch);
  m.discriminator.planar = planar;
  m.generator.validate();
  m.discriminator.validate();
  return m;
}

ModelConfig planar_twin(const ModelConfig& cfg) {
  ModelConfig m = cfg;
  m.generator.planar = true;
  m.generator.base_shape[0] = 1;
  m.discriminator.planar = true;
  m.discriminator.input_shape = m.generator.output_shape();
  m.generator.validate();
  m.discriminator.validate();
  return m;
}

// ---------------------------------------------------------------------------

uint64_t name_hash(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Tensor<T> fan_in_init(const Shape& shape, uint64_t seed, const std::string& name) {
  Tensor<T> t(shape);
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double g = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  Rng rng(seed ^ name_hash(name));
  for (auto& v : t.vec()) v = static_cast<T>(g * rng.normal());
  return t;
}

template <typename T>
Tensor<T> gaussian_init(const Shape& shape, uint64_t seed, const std::string& name, double scale) {
  Tensor<T> t(shape);
  Rng rng(seed ^ name_hash(name));
  for (auto& v : t.vec()) v = static_cast<T>(scale * rng.normal());
  return t;
}

double weight_gain(const Shape& shape, double lr_mul) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  return lr_mul / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
}

template <typename T>
Var<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(Var<T>::leaf(std::move(init), true));
  return vars_.back();
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return vars_[it->second];
}

template <typename T>
Var<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return vars_[it->second];
}

template <typename T>
int64_t ParameterStore<T>::total() const {
  int64_t n = 0;
  for (const auto& v : vars_) n += v.numel();
  return n;
}

// ---------------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(GeneratorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t c = cfg_.channels, m = cfg_.mapping_dim;
  const auto k = cfg_.kernel();
  auto init = [&](const std::string& name, Shape shape, double scale = 1.0) {
    params_.add(name, gaussian_init<T>(shape, seed, name, scale));
  };
  auto constant = [&](const std::string& name, Shape shape, T v) {
    params_.add(name, Tensor<T>(std::move(shape), v));
  };

  int64_t in = cfg_.latent_dim;
  for (int i = 0; i < cfg_.mapping_layers; ++i) {
    const std::string p = "G.mapping.fc" + std::to_string(i);
    init(p + ".weight", {m, in}, 1.0 / kMappingLrMul);
    constant(p + ".bias", {m}, T{0});
    in = m;
  }
  {
    Tensor<T> base({1, c, cfg_.base_shape[0], cfg_.base_shape[1], cfg_.base_shape[2]});
    Rng rng(seed ^ name_hash("G.const"));
    for (auto& v : base.vec()) v = static_cast<T>(rng.normal());
    params_.add("G.const", std::move(base));
  }

  Index3 res = cfg_.base_shape;
  layers_.push_back({"G.b0", res});
  for (int s = 1; s <= cfg_.n_doublings; ++s) {
    for (int a = 0; a < 3; ++a) res[a] *= cfg_.scale_factor()[a];
    layers_.push_back({"G.s" + std::to_string(s) + ".conv0", res});
    layers_.push_back({"G.s" + std::to_string(s) + ".conv1", res});
  }
  for (const auto& layer : layers_) {
    const std::string& l = layer.name;
    if (cfg_.block == GenBlockKind::Baseline) {
      init(l + ".affine.weight", {c, m});
      constant(l + ".affine.bias", {c}, T{1});
      init(l + ".weight", {c, c, k[0], k[1], k[2]});
    } else {
      const int64_t h = cfg_.branch_channels();
      for (const char* b : {".branch0", ".branch1"}) {
        init(l + b + ".affine.weight", {h, m});
        constant(l + b + ".affine.bias", {h}, T{1});
        init(l + b + ".weight", {h, h, k[0], k[1], k[2]});
      }
    }
    constant(l + ".noise_strength", {c}, T{0});
    constant(l + ".bias", {c}, T{0});
  }
  init("G.to_rgb.affine.weight", {c, m});
  constant("G.to_rgb.affine.bias", {c}, T{1});
  init("G.to_rgb.weight", {1, c, 1, 1, 1});
  constant("G.to_rgb.bias", {1}, T{0});
}

template <typename T>
int Generator<T>::num_modulated_layers() const {
  const int per = cfg_.block == GenBlockKind::Baseline ? 1 : 2;
  return static_cast<int>(layers_.size()) * per + 1;
}

template <typename T>
StyleState<T> Generator<T>::mapping(const Var<T>& z) const {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim)
    throw std::invalid_argument("generator latent must be (N, " +
                                std::to_string(cfg_.latent_dim) + ")");
  StyleState<T> st;
  Var<T> h = z;
  for (int i = 0; i < cfg_.mapping_layers; ++i) {
    const std::string p = "G.mapping.fc" + std::to_string(i);
    h = lrelu(linear(h, params_.get(p + ".weight"), params_.get(p + ".bias"), kMappingLrMul));
  }
  st.v = h;
  auto affine = [&](const std::string& p) {
    return linear(h, params_.get(p + ".affine.weight"), params_.get(p + ".affine.bias"));
  };
  for (const auto& layer : layers_) {
    if (cfg_.block == GenBlockKind::Baseline) {
      st.styles.push_back(affine(layer.name));
    } else {
      st.styles.push_back(affine(layer.name + ".branch0"));
      st.styles.push_back(affine(layer.name + ".branch1"));
    }
  }
  // Demodulated convs use raw weights; the unnormalised toRGB layer takes its
  // weight gain through the styles.
  st.styles.push_back(ag::scale(affine("G.to_rgb"),
                                static_cast<T>(weight_gain(params_.get("G.to_rgb.weight").shape()))));
  return st;
}

template <typename T>
Var<T> Generator<T>::block(const std::string& layer, const Var<T>& x,
                           const std::vector<Var<T>>& styles, bool shuffle_override) const {
  if (cfg_.block == GenBlockKind::Baseline)
    return modulated_conv3d(x, params_.get(layer + ".weight"), styles.at(0));
  return split_shuffle_gen_block(x, params_.get(layer + ".branch0.weight"),
                                 params_.get(layer + ".branch1.weight"), styles.at(0),
                                 styles.at(1),
                                 cfg_.block == GenBlockKind::SplitShuffle && shuffle_override);
}

template <typename T>
Var<T> Generator<T>::synthesis(const StyleState<T>& st, Rng* noise_rng) const {
  if (static_cast<int>(st.styles.size()) != num_modulated_layers())
    throw std::invalid_argument("synthesis: wrong number of style vectors");
  const int64_t n = st.v.shape()[0];
  const int64_t c = cfg_.channels;
  const auto& b = cfg_.base_shape;
  Var<T> x = ag::broadcast_to(params_.get("G.const"), Shape{n, c, b[0], b[1], b[2]});
  const int per = cfg_.block == GenBlockKind::Baseline ? 1 : 2;
  size_t si = 0;
  Index3 res = cfg_.base_shape;
  for (const auto& layer : layers_) {
    if (layer.resolution != res) {
      x = ag::upsample_nearest(x, cfg_.scale_factor());
      res = layer.resolution;
    }
    std::vector<Var<T>> styles(st.styles.begin() + static_cast<long>(si),
                               st.styles.begin() + static_cast<long>(si + per));
    si += per;
    Var<T> y = block(layer.name, x, styles);
    if (noise_rng && cfg_.noise) {
      Tensor<T> noise({n, 1, res[0], res[1], res[2]});
      for (auto& v : noise.vec()) v = static_cast<T>(noise_rng->normal());
      y = ag::add(y, ag::mul(channel_view(params_.get(layer.name + ".noise_strength")),
                             Var<T>::constant(std::move(noise))));
    }
    y = ag::add(y, channel_view(params_.get(layer.name + ".bias")));
    x = lrelu(y);
  }
  ModConvSpec rgb;
  rgb.demodulate = false;
  Var<T> out = modulated_conv3d(x, params_.get("G.to_rgb.weight"), st.styles.back(), rgb);
  return ag::add(out, channel_view(params_.get("G.to_rgb.bias")));
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& z, Rng* noise_rng) const {
  return synthesis(mapping(z), noise_rng);
}

// ---------------------------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t c = cfg_.channels;
  const auto k = cfg_.kernel();
  auto init = [&](const std::string& name, Shape shape) {
    params_.add(name, gaussian_init<T>(shape, seed, name));
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    params_.add(name, Tensor<T>(std::move(shape)));
  };
  init("D.stem.weight", {c, 1, 1, 1, 1});
  zeros("D.stem.bias", {c});
  for (int s = 0; s < cfg_.n_halvings; ++s)
    for (int j = 0; j < 2; ++j) {
      const std::string l = "D.s" + std::to_string(s) + ".conv" + std::to_string(j);
      blocks_.push_back(l);
      switch (cfg_.block) {
        case DiscBlockKind::Baseline: init(l + ".weight", {c, c, k[0], k[1], k[2]}); break;
        case DiscBlockKind::Group:
          init(l + ".weight", {c, c / cfg_.groups, k[0], k[1], k[2]});
          break;
        case DiscBlockKind::Depthwise:
          init(l + ".depthwise.weight", {c, 1, k[0], k[1], k[2]});
          init(l + ".pointwise.weight", {c, c, 1, 1, 1});
          break;
        case DiscBlockKind::Split:
        case DiscBlockKind::SplitShuffle:
          init(l + ".branch_a.weight", {c / 2, c / 2, k[0], k[1], k[2]});
          init(l + ".branch_b.weight", {c / 2, c / 2, 1, 1, 1});
          break;
      }
      zeros(l + ".bias", {c});
    }
  init("D.epilogue.conv.weight", {c, c + 1, k[0], k[1], k[2]});
  zeros("D.epilogue.conv.bias", {c});
  const auto base = cfg_.base_shape();
  init("D.epilogue.fc.weight", {c, c * base[0] * base[1] * base[2]});
  zeros("D.epilogue.fc.bias", {c});
  init("D.out.weight", {1, c});
  zeros("D.out.bias", {1});
}

template <typename T>
Var<T> Discriminator<T>::block(const std::string& l, const Var<T>& x) const {
  switch (cfg_.block) {
    case DiscBlockKind::Baseline: return conv(x, params_.get(l + ".weight"));
    case DiscBlockKind::Group: return conv(x, params_.get(l + ".weight"), cfg_.groups);
    case DiscBlockKind::Depthwise: {
      auto y = conv(x, params_.get(l + ".depthwise.weight"), cfg_.channels);
      return conv(y, params_.get(l + ".pointwise.weight"));
    }
    case DiscBlockKind::Split:
    case DiscBlockKind::SplitShuffle:
    {
      const auto& wa = params_.get(l + ".branch_a.weight");
      const auto& wb = params_.get(l + ".branch_b.weight");
      return split_shuffle_disc_block(x, gained(wa, weight_gain(wa.shape())), gained(wb, weight_gain(wb.shape())),
                                      cfg_.block == DiscBlockKind::SplitShuffle);
    }
  }
  throw std::logic_error("unhandled discriminator block kind");
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& x) const {
  const auto& in = cfg_.input_shape;
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != in[0] || s[3] != in[1] || s[4] != in[2])
    throw std::invalid_argument("discriminator input " + shape_str(s) + " does not match (N,1," +
                                std::to_string(in[0]) + "," + std::to_string(in[1]) + "," +
                                std::to_string(in[2]) + ")");
  Var<T> h = lrelu(ag::add(conv(x, params_.get("D.stem.weight")), channel_view(params_.get("D.stem.bias"))));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    h = lrelu(ag::add(block(blocks_[i], h), channel_view(params_.get(blocks_[i] + ".bias"))));
    if (i % 2 == 1) h = ag::avg_pool(h, cfg_.scale_factor());
  }
  h = minibatch_stddev(h);
  h = lrelu(ag::add(conv(h, params_.get("D.epilogue.conv.weight")),
                    channel_view(params_.get("D.epilogue.conv.bias"))));
  h = ag::reshape(h, Shape{s[0], h.numel() / s[0]});
  h = lrelu(linear(h, params_.get("D.epilogue.fc.weight"), params_.get("D.epilogue.fc.bias")));
  return linear(h, params_.get("D.out.weight"), params_.get("D.out.bias"));
}

// ---------------------------------------------------------------------------

int64_t ModelSummary::conv_weights(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, count] : weights) {
    if (name.rfind(prefix + ".", 0) != 0) continue;
    if (name.size() < 7 || name.compare(name.size() - 7, 7, ".weight") != 0) continue;
    if (name.find(".affine.") != std::string::npos) continue;
    n += count;
  }
  return n;
}

std::string ModelSummary::to_json() const {
  nlohmann::ordered_json layers_json = nlohmann::ordered_json::array();
  for (const auto& l : layers) layers_json.push_back({{"name", l.name}, {"count", l.count}});
  nlohmann::ordered_json doc = {{"model", model},     {"total", total},
                                {"generator", generator}, {"discriminator", discriminator},
                                {"mapping", mapping}, {"layers", layers_json}};
  return doc.dump(2);
}

template <typename T>
ModelSummary count_parameters(const Generator<T>& g, const Discriminator<T>& d,
                              const std::string& model_name) {
  ModelSummary s;
  s.model = model_name;
  auto visit = [&](const ParameterStore<T>& store, int64_t& total) {
    for (size_t i = 0; i < store.size(); ++i) {
      const std::string& name = store.names()[i];
      const int64_t n = store.get(name).numel();
      s.weights[name] = n;
      const std::string layer = name.substr(0, name.rfind('.'));
      if (s.layers.empty() || s.layers.back().name != layer) s.layers.push_back({layer, 0});
      s.layers.back().count += n;
      total += n;
      if (name.rfind("G.mapping.", 0) == 0) s.mapping += n;
    }
  };
  visit(g.params(), s.generator);
  visit(d.params(), s.discriminator);
  s.total = s.generator + s.discriminator;
  return s;
}

ModelSummary count_parameters(const ModelConfig& cfg) {
  Generator<float> g(cfg.generator, 0);
  Discriminator<float> d(cfg.discriminator, 0);
  return count_parameters(g, d, display_name(cfg.architecture));
}

std::string format_summary_table(const std::vector<ModelSummary>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "Model" << std::right << std::setw(10) << "#param"
     << std::setw(12) << "total" << std::setw(12) << "G" << std::setw(12) << "D"
     << std::setw(10) << "mapping" << "\n";
  os << std::string(74, '-') << "\n";
  for (const auto& r : rows) {
    std::ostringstream m;
    m << std::fixed << std::setprecision(3) << r.total / 1e6 << "M";
    os << std::left << std::setw(18) << r.model << std::right << std::setw(10) << m.str()
       << std::setw(12) << r.total << std::setw(12) << r.generator << std::setw(12)
       << r.discriminator << std::setw(10) << r.mapping << "\n";
  }
  return os.str();
}

#define VOLGEN_NETS_INSTANTIATE(T)                                                           \
  template struct ConvWeights3D<T>;                                                          \
  template ConvWeights3D<T> modulate<T>(const ConvWeights3D<T>&, std::span<const T>);        \
  template ConvWeights3D<T> demodulate<T>(const ConvWeights3D<T>&, double);                  \
  template Var<T> modulated_conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&,           \
                                      const ModConvSpec&);                                   \
  template std::pair<Var<T>, Var<T>> channel_split<T>(const Var<T>&);                        \
  template Var<T> channel_shuffle<T>(const Var<T>&, int64_t);                                \
  template Var<T> minibatch_stddev<T>(const Var<T>&);                                        \
  template Var<T> split_shuffle_disc_block<T>(const Var<T>&, const Var<T>&, const Var<T>&,   \
                                              bool);                                         \
  template Var<T> split_shuffle_gen_block<T>(const Var<T>&, const Var<T>&, const Var<T>&,    \
                                             const Var<T>&, const Var<T>&, bool);            \
  template Tensor<T> fan_in_init<T>(const Shape&, uint64_t, const std::string&);             \
  template Tensor<T> gaussian_init<T>(const Shape&, uint64_t, const std::string&, double);   \
  template class ParameterStore<T>;                                                          \
  template class Generator<T>;                                                               \
  template class Discriminator<T>;                                                           \
  template ModelSummary count_parameters<T>(const Generator<T>&, const Discriminator<T>&,    \
                                            const std::string&);

VOLGEN_NETS_INSTANTIATE(float)
VOLGEN_NETS_INSTANTIATE(double)
#undef VOLGEN_NETS_INSTANTIATE

}  // namespace volgen::nets
