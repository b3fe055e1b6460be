// Parallel kernels against the serial reference, the reference against a
// direct-loop oracle, and autodiff against finite differences.

#include <omp.h>

#include "doctest.h"
#include "test_util.hpp"
#include "volgen/autograd.hpp"
#include "volgen/kernels.hpp"

using namespace volgen;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

Conv3dGeometry random_geometry(Rng& r) {
  Conv3dGeometry g;
  g.groups = 1 + static_cast<int64_t>(r.below(3));
  g.batch = 1 + static_cast<int64_t>(r.below(3));
  g.in_channels = g.groups * (1 + static_cast<int64_t>(r.below(3)));
  g.out_channels = g.groups * (1 + static_cast<int64_t>(r.below(6)));
  for (int a = 0; a < 3; ++a) {
    g.in_size[a] = 1 + static_cast<int64_t>(r.below(7));
    g.kernel[a] = 1 + 2 * static_cast<int64_t>(r.below(2));
    g.stride[a] = 1 + static_cast<int64_t>(r.below(2));
    g.pad[a] = static_cast<int64_t>(r.below(2));
    if (g.in_size[a] + 2 * g.pad[a] < g.kernel[a]) g.in_size[a] = g.kernel[a];
  }
  return g;
}

template <typename T>
struct ConvCase {
  Conv3dGeometry g;
  Tensor<T> x, w, gy;
};

template <typename T>
ConvCase<T> make_case(const Conv3dGeometry& g, Rng& r) {
  const auto o = g.out_size();
  return {g,
          random_tensor<T>({g.batch, g.in_channels, g.in_size[0], g.in_size[1], g.in_size[2]}, r),
          random_tensor<T>({g.out_channels, g.in_channels / g.groups, g.kernel[0], g.kernel[1],
                            g.kernel[2]},
                           r),
          random_tensor<T>({g.batch, g.out_channels, o[0], o[1], o[2]}, r)};
}

// Worst difference between the parallel and reference kernels over all three passes.
template <typename T>
double kernel_vs_reference(const ConvCase<T>& c) {
  const auto& g = c.g;
  std::vector<T> y1(g.output_numel()), y2(g.output_numel());
  std::vector<T> gx1(g.input_numel()), gx2(g.input_numel());
  std::vector<T> gw1(g.weight_numel()), gw2(g.weight_numel());
  kernels::conv3d_forward<T>(g, c.x.span(), c.w.span(), y1);
  reference::conv3d_forward<T>(g, c.x.span(), c.w.span(), y2);
  kernels::conv3d_backward_input<T>(g, c.gy.span(), c.w.span(), gx1);
  reference::conv3d_backward_input<T>(g, c.gy.span(), c.w.span(), gx2);
  kernels::conv3d_backward_weight<T>(g, c.x.span(), c.gy.span(), gw1);
  reference::conv3d_backward_weight<T>(g, c.x.span(), c.gy.span(), gw2);
  double worst = 0;
  auto upd = [&](const std::vector<T>& a, const std::vector<T>& b) {
    for (size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  };
  upd(y1, y2);
  upd(gx1, gx2);
  upd(gw1, gw2);
  return worst;
}

}  // namespace

TEST_CASE("reference conv3d matches the direct-loop oracle") {
  Rng r(11);
  for (int t = 0; t < 60; ++t) {
    auto c = make_case<double>(random_geometry(r), r);
    std::vector<double> y(c.g.output_numel());
    reference::conv3d_forward<double>(c.g, c.x.span(), c.w.span(), y);
    auto oracle = testutil::naive_conv3d(c.x, c.w, c.g.stride, c.g.pad, c.g.groups);
    for (size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE("reference backward passes are adjoint to the forward pass") {
  // <conv(x, w), gy> = <x, dx> = <w, dw>
  Rng r(12);
  for (int t = 0; t < 60; ++t) {
    auto c = make_case<double>(random_geometry(r), r);
    const auto& g = c.g;
    std::vector<double> y(g.output_numel()), gx(g.input_numel()), gw(g.weight_numel());
    reference::conv3d_forward<double>(g, c.x.span(), c.w.span(), y);
    reference::conv3d_backward_input<double>(g, c.gy.span(), c.w.span(), gx);
    reference::conv3d_backward_weight<double>(g, c.x.span(), c.gy.span(), gw);
    double a = 0, b = 0, d = 0;
    for (size_t i = 0; i < y.size(); ++i) a += y[i] * c.gy[static_cast<int64_t>(i)];
    for (size_t i = 0; i < gx.size(); ++i) b += gx[i] * c.x[static_cast<int64_t>(i)];
    for (size_t i = 0; i < gw.size(); ++i) d += gw[i] * c.w[static_cast<int64_t>(i)];
    CHECK(b == doctest::Approx(a).epsilon(1e-10));
    CHECK(d == doctest::Approx(a).epsilon(1e-10));
  }
}

TEST_CASE("parallel conv kernels match the reference on random geometries") {
  Rng r(13);
  double worst = 0;
  for (int t = 0; t < 200; ++t) worst = std::max(worst, kernel_vs_reference(make_case<double>(random_geometry(r), r)));
  CHECK(worst < 1e-11);
}

TEST_CASE("parallel conv kernels match the reference on network geometries") {
  Rng r(14);
  std::vector<Conv3dGeometry> gs;
  // 3x3x3 same conv (transposed backward path), pointwise, depthwise, planar, strided.
  gs.push_back(Conv3dGeometry::same(2, 8, 8, {4, 8, 8}, {3, 3, 3}));
  gs.push_back(Conv3dGeometry::same(3, 2, 2, {2, 4, 4}, {3, 3, 3}));
  gs.push_back(Conv3dGeometry::same(2, 8, 8, {4, 8, 8}, {1, 1, 1}));
  gs.push_back(Conv3dGeometry::same(2, 1, 8, {4, 8, 8}, {1, 1, 1}));
  gs.push_back(Conv3dGeometry::same(2, 8, 1, {4, 8, 8}, {1, 1, 1}));
  gs.push_back(Conv3dGeometry::same(2, 8, 8, {4, 8, 8}, {3, 3, 3}, 8));
  gs.push_back(Conv3dGeometry::same(2, 8, 8, {4, 8, 8}, {3, 3, 3}, 2));
  gs.push_back(Conv3dGeometry::same(4, 6, 6, {1, 16, 16}, {1, 3, 3}));
  gs.push_back(Conv3dGeometry::same(2, 9, 3, {5, 7, 6}, {3, 3, 3}));
  auto strided = Conv3dGeometry::same(2, 4, 4, {6, 6, 6}, {3, 3, 3});
  strided.stride = {2, 2, 2};
  gs.push_back(strided);
  for (const auto& g : gs) {
    CHECK(kernel_vs_reference(make_case<double>(g, r)) < 1e-11);
    CHECK(kernel_vs_reference(make_case<float>(g, r)) < 2e-4);
  }
}

TEST_CASE("conv kernels are independent of the thread count") {
  Rng r(15);
  auto c = make_case<float>(Conv3dGeometry::same(4, 8, 8, {4, 8, 8}, {3, 3, 3}), r);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> y(c.g.output_numel()), gx(c.g.input_numel()), gw(c.g.weight_numel());
    kernels::conv3d_forward<float>(c.g, c.x.span(), c.w.span(), y);
    kernels::conv3d_backward_input<float>(c.g, c.gy.span(), c.w.span(), gx);
    kernels::conv3d_backward_weight<float>(c.g, c.x.span(), c.gy.span(), gw);
    y.insert(y.end(), gx.begin(), gx.end());
    y.insert(y.end(), gw.begin(), gw.end());
    return y;
  };
  const auto one = run(1);
  const auto three = run(3);
  omp_set_num_threads(max_threads());
  CHECK(one == three);
}

TEST_CASE("upsample, sum_pool and matmul match the reference") {
  Rng r(16);
  const Index3 in{2, 3, 4}, f{2, 2, 2};
  auto x = random_tensor<double>({3, 2, 3, 4}, r);
  std::vector<double> y1(3 * 4 * 6 * 8), y2(y1.size());
  kernels::upsample_nearest<double>(3, in, f, x.span(), y1);
  reference::upsample_nearest<double>(3, in, f, x.span(), y2);
  CHECK(y1 == y2);
  CHECK(y1[0] == x[0]);
  CHECK(y1[1] == x[0]);
  CHECK(y1[2] == x[1]);

  std::vector<double> p1(x.numel()), p2(x.numel());
  kernels::sum_pool<double>(3, in, f, y1, p1);
  reference::sum_pool<double>(3, in, f, y1, p2);
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i] == doctest::Approx(p2[i]));
    CHECK(p1[i] == doctest::Approx(8 * x[static_cast<int64_t>(i)]));
  }

  auto a = random_tensor<double>({5, 7}, r), b = random_tensor<double>({7, 3}, r);
  std::vector<double> c1(15), c2(15);
  kernels::matmul<double>(5, 7, 3, a.span(), b.span(), c1);
  reference::matmul<double>(5, 7, 3, a.span(), b.span(), c2);
  for (size_t i = 0; i < 15; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}

TEST_CASE("geometry validation rejects inconsistent settings") {
  Conv3dGeometry g = Conv3dGeometry::same(1, 3, 4, {4, 4, 4}, {3, 3, 3});
  g.groups = 2;
  CHECK_THROWS(g.validate());
}

// ---------------------------------------------------------------------------
// Autodiff.

namespace {
using V = ag::Var<double>;
V leaf(const Shape& s, Rng& r) { return V::leaf(random_tensor<double>(s, r), true); }
// Random projection so every output element influences the scalar.
V project(const V& y, Rng& r) {
  return ag::sum(ag::mul(y, V::constant(random_tensor<double>(y.shape(), r))));
}
}  // namespace

TEST_CASE("autodiff of elementwise ops with broadcasting") {
  Rng r(21);
  std::vector<V> in{leaf({2, 3, 4}, r), leaf({3, 1}, r), leaf({1, 3, 4}, r)};
  auto proj = V::constant(random_tensor<double>({2, 3, 4}, r));
  auto f = [&] {
    auto a = ag::add(in[0], in[1]);
    auto b = ag::mul(a, in[2]);
    auto c = ag::sub(ag::softplus(b), ag::sigmoid(ag::scale(in[0], 0.5)));
    auto d = ag::leaky_relu(ag::add_scalar(c, 0.1), 0.2);
    auto e = ag::rsqrt(ag::add_scalar(ag::square(in[2]), 1.0));
    return ag::sum(ag::mul(ag::add(d, e), proj));
  };
  CHECK(testutil::gradcheck(f, in) < 1e-6);
}

TEST_CASE("autodiff of reductions and shape ops") {
  Rng r(22);
  std::vector<V> in{leaf({4, 5}, r), leaf({5, 3}, r), leaf({2, 3, 2, 2, 2}, r)};
  auto f = [&] {
    auto m = ag::matmul(in[0], in[1]);
    auto t = ag::transpose(m);
    auto s = ag::sum_to(ag::broadcast_to(ag::reshape(t, {1, 3, 4}), {2, 3, 4}), {3, 1});
    auto x = in[2];
    auto cat = ag::concat_channels<double>({x, ag::slice_channels(x, 1, 2)});
    auto perm = ag::permute_channels(cat, {4, 0, 3, 1, 2});
    auto tail = ag::mean(ag::square(perm));
    return ag::add(ag::sum(ag::square(s)), tail);
  };
  CHECK(testutil::gradcheck(f, in) < 1e-6);
}

TEST_CASE("autodiff of conv3d, resampling and pooling") {
  Rng r(23);
  for (int64_t groups : {1, 2}) {
    std::vector<V> in{leaf({2, 4, 4, 4, 4}, r), leaf({4, 4 / groups, 3, 3, 3}, r)};
    Rng pr(24);
    auto proj = V::constant(random_tensor<double>({2, 4, 2, 2, 2}, pr));
    ag::ConvParams p;
    p.stride = {2, 2, 2};
    p.pad = {1, 1, 1};
    p.groups = groups;
    auto f = [&] {
      auto y = ag::conv3d(in[0], in[1], p);  // 2x2x2
      auto u = ag::upsample_nearest(ag::softplus(y), {2, 2, 2});
      auto q = ag::avg_pool(ag::mul(u, u), {2, 2, 2});
      return ag::sum(ag::mul(ag::add(q, ag::sum_pool(ag::sigmoid(u), {2, 2, 2})), proj));
    };
    CHECK(testutil::gradcheck(f, in) < 1e-6);
  }
}

TEST_CASE("second-order autodiff through conv3d") {
  // Gradient of |d/dx sum softplus(conv(x, w))|^2 w.r.t. w and x.
  Rng r(25);
  std::vector<V> in{leaf({2, 2, 3, 3, 3}, r), leaf({3, 2, 3, 3, 3}, r)};
  auto f = [&] {
    auto y = ag::softplus(ag::conv3d(in[0], in[1], ag::ConvParams::same(in[1].shape())));
    auto gx = ag::grad(ag::sum(y), {in[0]}, true)[0];
    return ag::sum(ag::square(gx));
  };
  CHECK(testutil::gradcheck(f, in) < 1e-6);
}

TEST_CASE("grad of an unrelated input is zero and GradModeGuard disables recording") {
  Rng r(26);
  auto a = leaf({3}, r), b = leaf({3}, r);
  auto g = ag::grad(ag::sum(ag::square(a)), {a, b});
  for (int i = 0; i < 3; ++i) {
    CHECK(g[0].value()[i] == doctest::Approx(2 * a.value()[i]));
    CHECK(g[1].value()[i] == 0.0);
  }
  {
    ag::GradModeGuard off(false);
    CHECK_FALSE(ag::grad_enabled());
    CHECK_FALSE(ag::square(a).requires_grad());
  }
  CHECK(ag::grad_enabled());
}
