#pragma once

// Network building blocks for the 3D style-based generator/discriminator:
// weight modulation/demodulation, modulated convolution, channel split and
// shuffle, minibatch standard deviation, the architecture variants, and
// parameter accounting.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "volgen/autograd.hpp"
#include "volgen/rng.hpp"
#include "volgen/tensor.hpp"

namespace volgen::nets {

template <typename T>
using Var = ag::Var<T>;

constexpr double kLeakySlope = 0.2;

/// Convolution weights (C_out, C_in, k_d, k_h, k_w).
template <typename T>
struct ConvWeights3D {
  Tensor<T> values;

  ConvWeights3D() = default;
  explicit ConvWeights3D(Tensor<T> v);

  int64_t out_channels() const { return values.dim(0); }
  int64_t in_channels() const { return values.dim(1); }
  Index3 kernel() const { return {values.dim(2), values.dim(3), values.dim(4)}; }
  int64_t taps() const { return values.dim(2) * values.dim(3) * values.dim(4); }
};

struct ModConvSpec {
  double epsilon = 1e-8;
  bool demodulate = true;
  Index3 stride{1, 1, 1};
  /// Negative = "same" padding for the kernel.
  Index3 padding{-1, -1, -1};
};

/// w'[j,i,k] = s[i] * w[j,i,k]
template <typename T>
ConvWeights3D<T> modulate(const ConvWeights3D<T>& w, std::span<const T> style);

/// w''[j,...] = w'[j,...] / sqrt(sum_{i,k} w'[j,i,k]^2 + eps)
template <typename T>
ConvWeights3D<T> demodulate(const ConvWeights3D<T>& w, double eps);

/// Convolution of x (N, C_in, D, H, W) with demodulate(modulate(w, s_n)) for each sample n,
/// computed in fused form: scale inputs by s, convolve with w, rescale outputs by the
/// per-sample demodulation coefficients. `styles` is (N, C_in).
template <typename T>
Var<T> modulated_conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& styles,
                        const ModConvSpec& spec = {});

template <typename T>
std::pair<Var<T>, Var<T>> channel_split(const Var<T>& x);

/// Source channel for each output position, i.e. reshape to (g, C/g),
/// transpose, flatten: output j reads input (j mod g) * (C / g) + j / g.
std::vector<int64_t> shuffle_permutation(int64_t channels, int64_t groups);

template <typename T>
Var<T> channel_shuffle(const Var<T>& x, int64_t groups);

/// Appends one channel holding the batch-wide mean of per-position population
/// standard deviations.
template <typename T>
Var<T> minibatch_stddev(const Var<T>& x);

// ---------------------------------------------------------------------------
// Architecture configuration.

enum class Architecture { Baseline, GroupD, DepthwiseD, SplitShuffleD, Split, SplitShuffle };
enum class GenBlockKind { Baseline, Split, SplitShuffle };
enum class DiscBlockKind { Baseline, Group, Depthwise, Split, SplitShuffle };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);
/// Table order: Baseline, Group-D, Depthwise-D, Split&Shuffle-D, Split, Split&Shuffle.
const std::vector<Architecture>& all_architectures();
std::string display_name(Architecture a);
GenBlockKind generator_block(Architecture a);
DiscBlockKind discriminator_block(Architecture a);

struct GeneratorConfig {
  Index3 base_shape{2, 4, 4};
  int n_doublings = 4;
  int64_t channels = 32;
  int64_t latent_dim = 64;
  int64_t mapping_dim = 64;
  int mapping_layers = 2;
  GenBlockKind block = GenBlockKind::Baseline;
  bool planar = false;  // 2D twin: depth extent 1, 1x3x3 kernels, no depth resampling
  bool noise = true;

  Index3 output_shape() const;
  Index3 kernel() const { return planar ? Index3{1, 3, 3} : Index3{3, 3, 3}; }
  Index3 scale_factor() const { return planar ? Index3{1, 2, 2} : Index3{2, 2, 2}; }
  int64_t branch_channels() const { return channels / 2; }
  void validate() const;
};

struct DiscriminatorConfig {
  Index3 input_shape{32, 64, 64};
  int n_halvings = 4;
  int64_t channels = 32;
  DiscBlockKind block = DiscBlockKind::Baseline;
  int64_t groups = 2;
  bool planar = false;

  Index3 base_shape() const;
  Index3 kernel() const { return planar ? Index3{1, 3, 3} : Index3{3, 3, 3}; }
  Index3 scale_factor() const { return planar ? Index3{1, 2, 2} : Index3{2, 2, 2}; }
  void validate() const;
};

struct ModelConfig {
  Architecture architecture = Architecture::Baseline;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
};

/// Generator and discriminator configs for a base shape and number of
/// resolution doublings. `planar` builds the 2D twin (base depth forced to 1).
ModelConfig make_model_config(Architecture arch, Index3 base_shape, int n_doublings,
                              int64_t channels = 32, int64_t mapping_dim = 64,
                              bool planar = false);
/// The 2D twin of a 3D config: identical channels and layer inventory, depth 1.
ModelConfig planar_twin(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters.

/// Ordered set of named trainable tensors.
template <typename T>
class ParameterStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> init);
  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Var<T>> vars() const { return vars_; }
  size_t size() const { return vars_.size(); }
  int64_t total() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
  std::map<std::string, size_t> index_;
};

/// Unit Gaussian scaled by 1/sqrt(fan_in), seeded by (seed, name).
template <typename T>
Tensor<T> fan_in_init(const Shape& shape, uint64_t seed, const std::string& name);

/// Unit Gaussian times `scale`, seeded by (seed, name). Network weights are
/// stored this way and multiplied by their gain in the forward pass.
template <typename T>
Tensor<T> gaussian_init(const Shape& shape, uint64_t seed, const std::string& name, double scale = 1.0);

/// lr_mul / sqrt(fan_in), fan_in = product of all but the leading dimension.
double weight_gain(const Shape& shape, double lr_mul = 1.0);

/// Learning-rate multiplier of the mapping network.
constexpr double kMappingLrMul = 0.01;
uint64_t name_hash(const std::string& s);

template <typename T>
struct StyleState {
  Var<T> v;                    // mapping output (N, mapping_dim)
  std::vector<Var<T>> styles;  // one (N, C_in) per modulated conv, in synthesis order
};

struct GenLayerInfo {
  std::string name;
  Index3 resolution;
};

template <typename T>
class Generator {
 public:
  Generator(GeneratorConfig cfg, uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  StyleState<T> mapping(const Var<T>& z) const;
  /// `noise_rng` == nullptr disables noise injection.
  Var<T> synthesis(const StyleState<T>& styles, Rng* noise_rng) const;
  Var<T> forward(const Var<T>& z, Rng* noise_rng) const;

  /// Modulated layers (conv branches and the output projection) in style order.
  int num_modulated_layers() const;
  const std::vector<GenLayerInfo>& conv_layers() const { return layers_; }

  /// One generator conv block without noise/bias/activation, for inspection.
  Var<T> block(const std::string& layer, const Var<T>& x, const std::vector<Var<T>>& styles,
               bool shuffle_override = true) const;

 private:
  GeneratorConfig cfg_;
  ParameterStore<T> params_;
  std::vector<GenLayerInfo> layers_;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, uint64_t seed);

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// x: (N, 1, D, H, W) -> logits (N, 1).
  Var<T> forward(const Var<T>& x) const;
  /// One conv block of the configured kind, without bias/activation.
  Var<T> block(const std::string& layer, const Var<T>& x) const;
  const std::vector<std::string>& block_layers() const { return blocks_; }

 private:
  DiscriminatorConfig cfg_;
  ParameterStore<T> params_;
  std::vector<std::string> blocks_;
};

/// Split&Shuffle discriminator block on explicit weights: 3x3x3 conv on the
/// first half, 1x1x1 conv on the second half, concatenation, shuffle (g = 2).
template <typename T>
Var<T> split_shuffle_disc_block(const Var<T>& x, const Var<T>& w_a, const Var<T>& w_b,
                                bool shuffle = true);

/// Split&Shuffle generator block on explicit weights: one modulated conv per
/// half with its own style, concatenation, shuffle (g = 2).
template <typename T>
Var<T> split_shuffle_gen_block(const Var<T>& x, const Var<T>& w_a, const Var<T>& w_b,
                               const Var<T>& style_a, const Var<T>& style_b,
                               bool shuffle = true);

// ---------------------------------------------------------------------------
// Parameter accounting.

struct LayerCount {
  std::string name;
  int64_t count = 0;
};

struct ModelSummary {
  std::string model;
  std::vector<LayerCount> layers;
  int64_t generator = 0;  // includes the mapping network
  int64_t discriminator = 0;
  int64_t mapping = 0;
  int64_t total = 0;

  /// Sum of convolution weights (no biases, affines or noise strengths) of
  /// the parameters under `prefix`.
  int64_t conv_weights(const std::string& prefix) const;
  std::string to_json() const;
  std::map<std::string, int64_t> weights;  // full parameter name -> count
};

template <typename T>
ModelSummary count_parameters(const Generator<T>& g, const Discriminator<T>& d,
                              const std::string& model_name);
ModelSummary count_parameters(const ModelConfig& cfg);

/// Aligned text table: Model | #param | G | D | mapping.
std::string format_summary_table(const std::vector<ModelSummary>& rows);

}  // namespace volgen::nets
