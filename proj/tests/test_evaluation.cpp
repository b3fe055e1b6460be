// Frechet distance closed forms and properties, the default embedder and
// slice-wise FID on phantoms.

#include <Eigen/Dense>

#include "doctest.h"
#include "test_util.hpp"
#include "volgen/evaluation.hpp"

using namespace volgen;
using namespace volgen::eval;

namespace {

FeatureStats stats_1d(double mu, double var) {
  FeatureStats s;
  s.mean = Eigen::VectorXd::Constant(1, mu);
  s.cov = Eigen::MatrixXd::Constant(1, 1, var);
  s.n = 100;
  return s;
}

std::vector<Volume> phantoms(int n, uint64_t first_seed, Index3 shape, float lo = -250.0f,
                             float hi = 650.0f) {
  std::vector<Volume> out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.seed = first_seed + static_cast<uint64_t>(i);
    s.shape = shape;
    s.intensity_lo = lo;
    s.intensity_hi = hi;
    out.push_back(normalize_hu(generate_phantom(s), -250.0f, 650.0f));
  }
  return out;
}

Eigen::MatrixXd random_features(int rows, int cols, Rng& r) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = r.normal() + 0.3 * j;
  return m;
}

}  // namespace

TEST_CASE("Frechet distance closed forms") {
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(0, 1)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(3, 1)) == doctest::Approx(9.0).epsilon(1e-9));
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(0, 4)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("Frechet distance matches the diagonal closed form") {
  // Diagonal covariances: sum (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2.
  FeatureStats a, b;
  a.mean = Eigen::Vector3d(1, 2, 3);
  b.mean = Eigen::Vector3d(0, 2, 5);
  a.cov = Eigen::Vector3d(1, 4, 9).asDiagonal();
  b.cov = Eigen::Vector3d(4, 4, 1).asDiagonal();
  a.n = b.n = 10;
  CHECK(frechet_distance(a, b) == doctest::Approx(1 + 4 + 1 + 0 + 4).epsilon(1e-9));
}

TEST_CASE("Frechet distance is symmetric and scales quadratically") {
  Rng r(1);
  auto x = FeatureStats::fit(random_features(40, 6, r));
  auto y = FeatureStats::fit(random_features(40, 6, r));
  const double d = frechet_distance(x, y);
  CHECK(d > 0);
  CHECK(frechet_distance(y, x) == doctest::Approx(d).epsilon(1e-9));
  Rng r2(1);
  auto fx = random_features(40, 6, r2), fy = random_features(40, 6, r2);
  auto sx = FeatureStats::fit(2.5 * fx), sy = FeatureStats::fit(2.5 * fy);
  CHECK(frechet_distance(sx, sy) == doctest::Approx(6.25 * d).epsilon(1e-9));
}

TEST_CASE("statistics validation") {
  Eigen::MatrixXd one(1, 3);
  one.setZero();
  CHECK_THROWS(FeatureStats::fit(one));
  FeatureStats a = stats_1d(0, 1), b;
  b.mean = Eigen::Vector2d(0, 0);
  b.cov = Eigen::Matrix2d::Identity();
  b.n = 4;
  CHECK_THROWS(frechet_distance(a, b));
}

TEST_CASE("default embedder is deterministic and 128-dimensional") {
  auto ex = default_extractor();
  Rng r(2);
  auto img = testutil::random_tensor<float>({20, 30}, r);
  auto a = ex->embed_one(img), b = ex->embed_one(img);
  CHECK(a.size() == 128);
  CHECK(a == b);
  CHECK(default_extractor()->embed_one(img) == a);
  CHECK(make_extractor("default")->id() == ex->id());
  CHECK_THROWS(make_extractor("bogus"));
}

TEST_CASE("slice FID of a set against itself is zero") {
  auto real = phantoms(16, 0, {16, 32, 32});
  auto rep = slice_fid(real, real, *default_extractor());
  CHECK(rep.fid_ax < 1e-6);
  CHECK(rep.fid_sag < 1e-6);
  CHECK(rep.fid_cor < 1e-6);
  CHECK(rep.fid_avg < 1e-6);
  CHECK(rep.n_used == 16);
}

TEST_CASE("reversing the depth axis changes only the planes that see it") {
  // Odd depth: the axial centre slice is the same slice after reversal, while
  // sagittal and coronal centre slices are mirrored top to bottom.
  auto real = phantoms(16, 0, {15, 32, 32});
  auto flipped = real;
  for (auto& v : flipped) {
    const Volume src = v;
    for (int64_t d = 0; d < v.depth(); ++d)
      for (int64_t h = 0; h < v.height(); ++h)
        for (int64_t w = 0; w < v.width(); ++w) v.at(d, h, w) = src.at(v.depth() - 1 - d, h, w);
  }
  auto base = slice_fid(real, real, *default_extractor());
  auto rep = slice_fid(real, flipped, *default_extractor());
  CHECK(base.fid_sag < 1e-6);
  CHECK(rep.fid_ax == doctest::Approx(base.fid_ax));
  CHECK(rep.fid_sag > 1e-5);
  CHECK(rep.fid_cor > 1e-5);
}

TEST_CASE("disjoint phantom populations score worse than two splits of one population") {
  const Index3 shape{8, 32, 32};
  auto a = phantoms(16, 0, shape);
  auto b = phantoms(16, 100, shape);
  auto other = phantoms(16, 200, shape, -1000.0f, 0.0f);
  auto ex = default_extractor();
  const double same = slice_fid(a, b, *ex).fid_avg;
  const double diff = slice_fid(a, other, *ex).fid_avg;
  CHECK(diff > same);
}

TEST_CASE("slice_fid needs two volumes per side") {
  auto one = phantoms(1, 0, {4, 8, 8});
  auto two = phantoms(2, 0, {4, 8, 8});
  CHECK_THROWS(slice_fid(one, two, *default_extractor()));
}
