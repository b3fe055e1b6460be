#pragma once

// GAN losses, R1 penalty, Adam, and the 2D pretraining / 3D training loops
// with checkpointing and a CSV metric log.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "volgen/archive.hpp"
#include "volgen/evaluation.hpp"
#include "volgen/inflation.hpp"
#include "volgen/nets.hpp"
#include "volgen/volume.hpp"

namespace volgen::train {

template <typename T>
using Var = ag::Var<T>;

struct TrainConfig {
  double gamma = 0.0512;
  int64_t batch = 16;
  double lr_scratch = 0.0025;
  double lr_inflated = 0.002;
  double total_kimg = 50;
  uint64_t seed = 0;
  double snapshot_every_kimg = 10;
  Plane plane = Plane::Axial;
  bool ema = false;
  double ema_beta = 0.999;

  void validate() const;
  /// ceil(total_kimg * 1000 / batch)
  int64_t total_steps() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const nets::ModelConfig& m);
nets::ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

template <typename T>
struct GanLosses {
  Var<T> loss_G;
  Var<T> loss_D;
};

/// loss_D = mean softplus(d_fake) + mean softplus(-d_real); loss_G = mean softplus(-d_fake).
template <typename T>
GanLosses<T> gan_losses(const Var<T>& d_real, const Var<T>& d_fake);

/// (gamma / 2) * mean_n |d/dx_n sum D(x)|^2, differentiable w.r.t. the
/// discriminator parameters.
template <typename T>
Var<T> r1_penalty(const std::function<Var<T>(const Var<T>&)>& discriminator,
                  const Tensor<T>& real, double gamma);
/// Same, reusing an existing D(real) graph built on the leaf `real`.
template <typename T>
Var<T> r1_from_logits(const Var<T>& d_real, const Var<T>& real, double gamma);

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.0, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Updates the leaf values of `params` in place.
  void step(std::vector<Var<T>>& params, const std::vector<Var<T>>& grads);
  int64_t steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// Training images as (D, H, W) tensors in [-1, 1]; D = 1 for 2D slices.
class Dataset {
 public:
  Dataset(std::vector<Tensor<float>> items, uint64_t seed);
  static Dataset from_slices(const std::vector<Slice2D>& slices, uint64_t seed);
  static Dataset from_volumes(const std::vector<Volume>& volumes, uint64_t seed);

  size_t size() const { return items_.size(); }
  const Tensor<float>& item(size_t i) const { return items_[i]; }
  Index3 item_shape() const;
  /// (batch, 1, D, H, W). Samples k = step*batch .. step*batch+batch-1 of an
  /// endless stream of seed-determined epoch permutations.
  Tensor<float> batch(int64_t step, int64_t batch);

 private:
  std::vector<Tensor<float>> items_;
  uint64_t seed_;
  int64_t epoch_ = -1;
  std::vector<size_t> perm_;
};

struct MetricRow {
  double kimg = 0;
  double loss_G = NAN, loss_D = NAN, r1 = NAN;
  std::optional<double> fid_ax, fid_sag, fid_cor, fid_avg;

  std::string csv() const;
  nlohmann::ordered_json to_json() const;
};

std::string metrics_header();

/// Independent seeded stream for (seed, purpose, index).
Rng stream(uint64_t seed, const std::string& purpose, uint64_t index);

struct GanModels {
  nets::ModelConfig config;
  nets::Generator<float> G;
  nets::Discriminator<float> D;

  GanModels(const nets::ModelConfig& cfg, uint64_t seed);
};

/// Generates `n` samples as (D, H, W) tensors from fixed latent/noise streams.
std::vector<Tensor<float>> generate(const nets::Generator<float>& g, int64_t n, uint64_t seed,
                                    int64_t chunk = 8);

struct StepStats {
  double loss_G = 0, loss_D = 0, r1 = 0;
};

class GanTrainer {
 public:
  GanTrainer(const nets::ModelConfig& cfg, const TrainConfig& tc, double lr);

  GanModels& models() { return models_; }
  const GanModels& models() const { return models_; }
  /// Generator used for sampling: the EMA copy when enabled.
  const nets::Generator<float>& sampling_generator() const;

  StepStats step(Dataset& data);
  int64_t steps_done() const { return step_; }
  double kimg() const;
  void sync_ema();

  Archive to_archive(const nlohmann::ordered_json& extra) const;

 private:
  TrainConfig tc_;
  GanModels models_;
  std::optional<nets::Generator<float>> ema_;
  Adam<float> opt_g_, opt_d_;
  int64_t step_ = 0;
};

/// Loads models (and the EMA generator when present) from a checkpoint.
GanModels load_models(const Archive& a, bool prefer_ema = true);
void load_weights(nets::ParameterStore<float>& store, const Archive& a, const std::string& prefix = "");

using SnapshotFn = std::function<void(const MetricRow&, const GanTrainer&)>;

struct EvalSetup {
  const eval::FeatureExtractor* extractor = nullptr;  // null = no FID
  int64_t n_samples = 16;
  uint64_t seed = 12345;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  Archive checkpoint;
  std::optional<inflation::InflationReport> inflation;
};

TrainResult pretrain_2d(const nets::ModelConfig& twin, const TrainConfig& tc,
                        const std::vector<Slice2D>& slices, const EvalSetup& ev,
                        const SnapshotFn& on_snapshot = {});

TrainResult train_3d(const nets::ModelConfig& cfg, const TrainConfig& tc,
                     const std::vector<Volume>& volumes, const Archive* init2d,
                     const inflation::InflationStrategy& strategy, inflation::Scope scope,
                     const EvalSetup& ev, const SnapshotFn& on_snapshot = {});

/// Builds a 3D trainer initialised from a 2D checkpoint (or fresh when null)
/// without running any steps.
struct Prepared3D {
  GanTrainer trainer;
  std::optional<inflation::InflationReport> report;
};
Prepared3D prepare_3d(const nets::ModelConfig& cfg, const TrainConfig& tc, const Archive* init2d,
                      const inflation::InflationStrategy& strategy, inflation::Scope scope);

std::vector<Volume> as_volumes(const std::vector<Tensor<float>>& samples, const std::string& prefix);

}  // namespace volgen::train
