#include "volgen/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "volgen/archive.hpp"
#include "volgen/kernels.hpp"
#include "volgen/nets.hpp"

namespace volgen::eval {

FeatureStats FeatureStats::fit(const Eigen::MatrixXd& f) {
  if (f.rows() < 2)
    throw std::invalid_argument("feature statistics need at least 2 samples, got " +
                                std::to_string(f.rows()));
  FeatureStats s;
  s.n = f.rows();
  s.mean = f.colwise().mean().transpose();
  const Eigen::MatrixXd centered = f.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
  return s;
}

void FeatureStats::validate() const {
  if (n < 2) throw std::invalid_argument("feature statistics need n >= 2");
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw std::invalid_argument("covariance shape does not match mean");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-6 * scale)
    throw std::invalid_argument("covariance is not symmetric");
}

namespace {

// Eigenvalues below -tol (relative to the spectrum scale) mean the matrix is
// genuinely indefinite; smaller negatives are rounding and clamp to 0.
Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double tol = 1e-6 * scale;
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol)
      throw std::domain_error(std::string(what) + " has eigenvalue " + std::to_string(ev[i]) +
                              " below tolerance");
    if (out[i] < 0) out[i] = 0;
  }
  return out;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  a.validate();
  b.validate();
  if (a.mean.size() != b.mean.size())
    throw std::invalid_argument("frechet_distance: feature dims differ (" +
                                std::to_string(a.mean.size()) + " vs " +
                                std::to_string(b.mean.size()) + ")");
  const Eigen::MatrixXd sa = 0.5 * (a.cov + a.cov.transpose());
  const Eigen::MatrixXd sb = 0.5 * (b.cov + b.cov.transpose());

  // Tr((S_a S_b)^(1/2)) = Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)); the inner
  // product is symmetric, so a symmetric eigen-decomposition suffices.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  const Eigen::VectorXd la = clamped_eigenvalues(ea.eigenvalues(), "covariance");
  const Eigen::MatrixXd root_a =
      ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = root_a * sb * root_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lm = clamped_eigenvalues(em.eigenvalues(), "covariance product");

  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double trace_term = sa.trace() + sb.trace() - 2.0 * lm.cwiseSqrt().sum();
  return std::max(0.0, mean_term + trace_term);
}

Eigen::VectorXd FeatureExtractor::embed_one(const Tensor<float>& image) const {
  return embed({image}).row(0).transpose();
}

ConvEmbedder::ConvEmbedder(uint64_t seed) : id_("conv-embedder-seed" + std::to_string(seed)) {
  const int64_t ch[4] = {1, 32, 64, 128};
  for (int l = 0; l < 3; ++l) {
    const std::string name = "extractor.conv" + std::to_string(l) + ".weight";
    weights_.push_back(nets::fan_in_init<float>({ch[l + 1], ch[l], 1, 3, 3}, seed, name));
    biases_.emplace_back(Shape{ch[l + 1]});
  }
}

std::unique_ptr<ConvEmbedder> ConvEmbedder::from_archive(const std::filesystem::path& path) {
  auto e = std::make_unique<ConvEmbedder>(0);
  const Archive a = read_archive(path);
  for (int l = 0; l < 3; ++l) {
    const std::string p = "extractor.conv" + std::to_string(l);
    const auto& w = a.block(p + ".weight");
    const auto& b = a.block(p + ".bias");
    if (w.shape() != e->weights_[l].shape() || b.shape() != e->biases_[l].shape())
      throw std::invalid_argument("extractor archive layer " + p + " has the wrong shape");
    e->weights_[l] = w;
    e->biases_[l] = b;
  }
  e->id_ = "file:" + path.string();
  return e;
}

Eigen::MatrixXd ConvEmbedder::embed(const std::vector<Tensor<float>>& images) const {
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t s = kInputSize;
  Tensor<float> x({n, 1, 1, s, s});
  for (int64_t i = 0; i < n; ++i) {
    const auto r = resize_bilinear(images[static_cast<size_t>(i)], s, s);
    std::copy_n(r.data(), s * s, x.data() + i * s * s);
  }
  int64_t size = s;
  for (size_t l = 0; l < weights_.size(); ++l) {
    Conv3dGeometry g;
    g.batch = n;
    g.in_channels = weights_[l].dim(1);
    g.out_channels = weights_[l].dim(0);
    g.in_size = {1, size, size};
    g.kernel = {1, 3, 3};
    g.stride = {1, 2, 2};
    g.pad = {0, 1, 1};
    const auto os = g.out_size();
    Tensor<float> y({n, g.out_channels, 1, os[1], os[2]});
    kernels::conv3d_forward<float>(g, x.span(), weights_[l].span(), y.span());
    const int64_t plane = os[1] * os[2];
    for (int64_t i = 0; i < n * g.out_channels; ++i) {
      const float b = biases_[l][i % g.out_channels];
      float* p = y.data() + i * plane;
      for (int64_t k = 0; k < plane; ++k) {
        const float v = p[k] + b;
        p[k] = v >= 0 ? v : static_cast<float>(nets::kLeakySlope) * v;
      }
    }
    x = std::move(y);
    size = os[1];
  }
  const int64_t c = x.dim(1), plane = size * size;
  Eigen::MatrixXd f(n, c);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double acc = 0;
      const float* p = x.data() + (i * c + j) * plane;
      for (int64_t k = 0; k < plane; ++k) acc += p[k];
      f(i, j) = acc / static_cast<double>(plane);
    }
  return f;
}

std::unique_ptr<ConvEmbedder> default_extractor() { return std::make_unique<ConvEmbedder>(0); }

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
  if (spec == "default") return default_extractor();
  if (spec.rfind("file:", 0) == 0) return ConvEmbedder::from_archive(spec.substr(5));
  throw std::invalid_argument("unknown extractor '" + spec + "' (expected default or file:<path>)");
}

std::string SliceFidReport::to_json() const {
  nlohmann::ordered_json j = {{"fid_ax", fid_ax},
                              {"fid_sag", fid_sag},
                              {"fid_cor", fid_cor},
                              {"fid_avg", fid_avg},
                              {"extractor_id", extractor_id},
                              {"n_real", n_real},
                              {"n_fake", n_fake},
                              {"n_used", n_used}};
  return j.dump(2);
}

std::string SliceFidReport::csv_row(double kimg) const {
  std::ostringstream os;
  os << std::setprecision(10) << kimg << ",,,," << fid_ax << "," << fid_sag << "," << fid_cor
     << "," << fid_avg;
  return os.str();
}

double image_fid(const std::vector<Tensor<float>>& real, const std::vector<Tensor<float>>& fake,
                 const FeatureExtractor& extractor) {
  const size_t n = std::min(real.size(), fake.size());
  if (n < 2) throw std::invalid_argument("FID needs at least 2 samples on each side");
  std::vector<Tensor<float>> r(real.begin(), real.begin() + static_cast<long>(n));
  std::vector<Tensor<float>> f(fake.begin(), fake.begin() + static_cast<long>(n));
  return frechet_distance(FeatureStats::fit(extractor.embed(r)),
                          FeatureStats::fit(extractor.embed(f)));
}

SliceFidReport slice_fid(const std::vector<Volume>& real, const std::vector<Volume>& fake,
                         const FeatureExtractor& extractor) {
  if (real.size() < 2 || fake.size() < 2)
    throw std::invalid_argument("slice_fid needs at least 2 volumes on each side (got " +
                                std::to_string(real.size()) + " real, " +
                                std::to_string(fake.size()) + " generated)");
  SliceFidReport rep;
  rep.extractor_id = extractor.id();
  rep.n_real = static_cast<int64_t>(real.size());
  rep.n_fake = static_cast<int64_t>(fake.size());
  rep.n_used = std::min(rep.n_real, rep.n_fake);
  double* out[3] = {&rep.fid_ax, &rep.fid_sag, &rep.fid_cor};
  const Plane planes[3] = {Plane::Axial, Plane::Sagittal, Plane::Coronal};
  for (int p = 0; p < 3; ++p) {
    std::vector<Tensor<float>> r, f;
    for (int64_t i = 0; i < rep.n_used; ++i) {
      r.push_back(center_slice(real[static_cast<size_t>(i)], planes[p]).pixels);
      f.push_back(center_slice(fake[static_cast<size_t>(i)], planes[p]).pixels);
    }
    *out[p] = image_fid(r, f, extractor);
  }
  rep.fid_avg = (rep.fid_ax + rep.fid_sag + rep.fid_cor) / 3.0;
  return rep;
}

}  // namespace volgen::eval
