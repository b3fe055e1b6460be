#pragma once

// Run configuration: one JSON document with data/model/train/inflate/eval
// sections, strict key checking, dotted-key overrides, and resolution of
// defaults into a concrete copy written next to every run.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "volgen/inflation.hpp"
#include "volgen/nets.hpp"
#include "volgen/training.hpp"
#include "volgen/volume.hpp"

namespace volgen::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhantomSection {
  uint64_t seed = 0;
  int64_t count = 16;
  int n_ellipsoids = 3;
  float intensity_lo = -250.0f;
  float intensity_hi = 650.0f;
};

struct DataSection {
  std::optional<std::string> manifest;  // user volumes; phantoms when absent
  PhantomSection phantom;
  HuWindow hu_window;
  Index3 target_shape{32, 64, 64};
  Plane plane = Plane::Axial;
};

struct ModelSection {
  nets::Architecture variant = nets::Architecture::SplitShuffle;
  int64_t channels = 32;
  Index3 base_shape{2, 4, 4};
  int64_t mapping_dim = 64;
};

struct InflateSection {
  inflation::InflationStrategy strategy;
  inflation::Scope scope = inflation::Scope::GAndD;
};

struct EvalSection {
  std::string extractor = "default";
  int64_t n_samples = 16;
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  train::TrainConfig train;
  bool total_kimg_set = false;  // false: per-command default (100 for 2D, 50 for 3D)
  InflateSection inflate;
  EvalSection eval;

  /// 3D model: n_doublings from target_shape = base_shape * 2^n.
  nets::ModelConfig model_config() const;
  /// Train settings with total_kimg resolved for a command.
  train::TrainConfig train_for(double default_kimg) const;
};

/// Every key with its default value.
nlohmann::ordered_json default_document();

/// Merges `user` over the defaults; unknown keys and type mismatches throw
/// ConfigError naming the dotted key.
RunConfig parse(const nlohmann::ordered_json& user);

/// Applies "a.b.c=value" overrides to a document. Values parse as JSON when
/// possible and as plain strings otherwise.
void apply_overrides(nlohmann::ordered_json& doc, const std::vector<std::string>& sets);

/// Reads `path` (empty = defaults only), applies overrides, parses.
RunConfig load(const std::string& path, const std::vector<std::string>& sets);

/// Fully resolved document (every default filled in) for a command whose
/// total_kimg default is `default_kimg`.
nlohmann::ordered_json resolved(const RunConfig& cfg, double default_kimg);

/// Preprocessed training volumes: the manifest's volumes, or phantoms
/// generated from the phantom section, all at target_shape in [-1, 1].
std::vector<Volume> load_volumes(const DataSection& data);

}  // namespace volgen::config
