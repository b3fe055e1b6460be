#pragma once

// Slice-wise Frechet distance between real and generated volumes.

#include <Eigen/Dense>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "volgen/tensor.hpp"
#include "volgen/volume.hpp"

namespace volgen::eval {

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n - 1)
  int64_t n = 0;

  /// Rows of `features` are samples.
  static FeatureStats fit(const Eigen::MatrixXd& features);
  void validate() const;
};

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual int64_t dim() const = 0;
  /// One row per image; images are 2D (rows, cols) of any size.
  virtual Eigen::MatrixXd embed(const std::vector<Tensor<float>>& images) const = 0;
  Eigen::VectorXd embed_one(const Tensor<float>& image) const;
};

/// Resize to 64x64, three stride-2 3x3 convs (1 -> 32 -> 64 -> 128) with
/// leaky-ReLU, global average pool. Untrained; weights drawn from a seed.
class ConvEmbedder : public FeatureExtractor {
 public:
  static constexpr int64_t kInputSize = 64;

  explicit ConvEmbedder(uint64_t seed = 0);
  /// Weights from an archive with blocks extractor.conv{0,1,2}.{weight,bias}.
  static std::unique_ptr<ConvEmbedder> from_archive(const std::filesystem::path& path);

  std::string id() const override { return id_; }
  int64_t dim() const override { return 128; }
  Eigen::MatrixXd embed(const std::vector<Tensor<float>>& images) const override;

 private:
  std::string id_;
  std::vector<Tensor<float>> weights_;
  std::vector<Tensor<float>> biases_;
};

std::unique_ptr<ConvEmbedder> default_extractor();
/// "default" or "file:<archive path>".
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

struct SliceFidReport {
  double fid_ax = 0, fid_sag = 0, fid_cor = 0, fid_avg = 0;
  std::string extractor_id;
  int64_t n_real = 0, n_fake = 0, n_used = 0;

  std::string to_json() const;
  /// kimg,loss_G,loss_D,r1,fid_ax,fid_sag,fid_cor,fid_avg with empty loss fields.
  std::string csv_row(double kimg) const;
};

double image_fid(const std::vector<Tensor<float>>& real, const std::vector<Tensor<float>>& fake,
                 const FeatureExtractor& extractor);

/// Centre slices per plane, equal-size sets of min(n_real, n_fake) volumes.
SliceFidReport slice_fid(const std::vector<Volume>& real, const std::vector<Volume>& fake,
                         const FeatureExtractor& extractor);

}  // namespace volgen::eval
