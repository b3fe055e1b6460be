// 2D -> 3D weight inflation: per-strategy slice contents, the slice-wise
// equivalence oracle and model-level dispositions.

#include <cmath>
#include <map>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "volgen/inflation.hpp"

using namespace volgen;
using namespace volgen::inflation;
using testutil::random_tensor;

namespace {

InflationStrategy strategy(Kind k, ResidualInit r = ResidualInit::Gaussian) {
  InflationStrategy s;
  s.kind = k;
  s.residual_init = r;
  return s;
}

// True when depth slice d of w3 (C_O, C_I, kd, 3, 3) equals alpha * w2 bit-exactly.
bool depth_slice_is(const Tensor<float>& w3, int64_t d, const Tensor<float>& w2, double alpha) {
  const int64_t co = w3.dim(0), ci = w3.dim(1);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t i = 0; i < ci; ++i)
      for (int64_t a = 0; a < 3; ++a)
        for (int64_t b = 0; b < 3; ++b) {
          const float src = w2[((o * ci + i) * 3 + a) * 3 + b];
          const float want = alpha == 1.0 ? src : static_cast<float>(alpha * static_cast<double>(src));
          if (w3.at(o, i, d, a, b) != want) return false;
        }
  return true;
}

}  // namespace

TEST_CASE("I1 writes the centre depth slice") {
  Rng r(1);
  auto w3 = inflate(Tensor<float>({2, 3, 3, 3}, 1.0f), 3, strategy(Kind::I1), r);
  CHECK(w3.shape() == Shape{2, 3, 3, 3, 3});
  for (int64_t o = 0; o < 2; ++o)
    for (int64_t a = 0; a < 3; ++a) CHECK(w3.at(o, 1, 1, a, 2) == 1.0f);
  CHECK(w3.at(0, 0, 0, 0, 0) != 1.0f);
}

TEST_CASE("each strategy writes the slices named by its formula") {
  Rng r(2);
  auto w2 = random_tensor<float>({4, 3, 3, 3}, r);
  Rng a(3), b(3), c(3), d(3);
  auto i1 = inflate(w2, 3, strategy(Kind::I1), a);
  CHECK(depth_slice_is(i1, 1, w2, 1.0));
  CHECK_FALSE(depth_slice_is(i1, 0, w2, 1.0));

  auto i2 = inflate(w2, 3, strategy(Kind::I2), b);
  CHECK(depth_slice_is(i2, 0, w2, 1.0));
  CHECK(depth_slice_is(i2, 1, w2, 1.0));
  CHECK_FALSE(depth_slice_is(i2, 2, w2, 1.0));

  auto i3 = inflate(w2, 3, strategy(Kind::I3), c);
  for (int64_t k = 0; k < 3; ++k) CHECK(depth_slice_is(i3, k, w2, 1.0));

  auto nwi = inflate(w2, 3, strategy(Kind::NWI), d);
  CHECK(depth_slice_is(nwi, 0, w2, -1.0 / 3.0));
  CHECK(depth_slice_is(nwi, 1, w2, 5.0 / 3.0));
  CHECK(depth_slice_is(nwi, 2, w2, -1.0 / 3.0));
}

TEST_CASE("ASC applies the three centre assignments in order") {
  Rng r(4), q(5);
  auto w2 = random_tensor<float>({2, 2, 3, 3}, r);
  auto w3 = inflate(w2, 3, strategy(Kind::ASC), q);
  auto src = [&](int64_t o, int64_t i, int64_t a, int64_t b) { return w2[((o * 2 + i) * 3 + a) * 3 + b]; };
  for (int64_t o = 0; o < 2; ++o)
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t a = 0; a < 3; ++a)
        for (int64_t b = 0; b < 3; ++b) {
          // Depth-centre, then height-centre, then width-centre; the last write wins.
          CHECK(w3.at(o, i, a, b, 1) == src(o, i, a, b));
          if (b != 1) CHECK(w3.at(o, i, a, 1, b) == src(o, i, a, b));
          if (a != 1 && b != 1) CHECK(w3.at(o, i, 1, a, b) == src(o, i, a, b));
        }
  Rng s(6);
  CHECK_THROWS(inflate(Tensor<float>({1, 1, 3, 3}), 5, strategy(Kind::ASC), s));
}

TEST_CASE("NWI coefficients") {
  auto a = nwi_coefficients(3, 3);
  CHECK(a[0] == doctest::Approx(-1.0 / 3.0));
  CHECK(a[1] == doctest::Approx(5.0 / 3.0));
  CHECK(a[2] == doctest::Approx(-1.0 / 3.0));
  for (int T : {1, 2, 3, 5}) {
    auto c = nwi_coefficients(T, 3);
    CHECK(c[0] + c[1] + c[2] == doctest::Approx((2.0 * T - 3.0) / T));
  }
}

TEST_CASE("NONE keeps the Gaussian base initialisation") {
  Rng r(7);
  auto w3 = inflate(Tensor<float>({64, 64, 3, 3}, 1.0f), 3, strategy(Kind::None), r);
  double mean_abs = 0, var = 0;
  for (int64_t i = 0; i < w3.numel(); ++i) {
    mean_abs += std::abs(w3[i]);
    var += static_cast<double>(w3[i]) * w3[i];
  }
  mean_abs /= static_cast<double>(w3.numel());
  var /= static_cast<double>(w3.numel());
  // Half-normal mean sigma * sqrt(2 / pi) with sigma = 0.1.
  CHECK(mean_abs == doctest::Approx(0.1 * std::sqrt(2.0 / std::numbers::pi)).epsilon(0.02));
  CHECK(var == doctest::Approx(0.01).epsilon(0.03));
}

TEST_CASE("zero residual leaves unnamed slices at zero and inflation is seed-deterministic") {
  Rng r(8);
  auto w2 = random_tensor<float>({2, 2, 3, 3}, r);
  Rng a(9);
  auto w3 = inflate(w2, 3, strategy(Kind::I1, ResidualInit::Zeros), a);
  for (int64_t d : {0, 2})
    for (int64_t a2 = 0; a2 < 3; ++a2) CHECK(w3.at(1, 0, d, a2, 1) == 0.0f);
  Rng b(10), c(10);
  CHECK(inflate(w2, 3, strategy(Kind::I2), b) == inflate(w2, 3, strategy(Kind::I2), c));
}

TEST_CASE("I1 with zero residual equals slice-wise 2D convolution") {
  Rng r(11);
  double worst = 0;
  for (int t = 0; t < 10; ++t) {
    auto w2 = random_tensor<double>({3, 2, 3, 3}, r);
    auto x = random_tensor<double>({1, 2, 8, 8, 8}, r);
    Rng q(12);
    auto w3 = inflate(w2, 3, strategy(Kind::I1, ResidualInit::Zeros), q);
    auto y = ag::conv3d(ag::Var<double>::constant(x), ag::Var<double>::constant(w3),
                        ag::ConvParams::same(w3.shape()));
    auto oracle = testutil::naive_conv3d(x, w2.reshaped({3, 2, 1, 3, 3}), {1, 1, 1}, {0, 1, 1});
    worst = std::max(worst, testutil::max_abs_diff(y.value(), oracle));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("NWI with T=3 on depth-constant input equals 2D convolution away from the depth border") {
  Rng r(13);
  auto w2 = random_tensor<double>({2, 2, 3, 3}, r);
  auto plane = random_tensor<double>({1, 2, 1, 6, 6}, r);
  Tensor<double> x({1, 2, 5, 6, 6});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t d = 0; d < 5; ++d)
      for (int64_t v = 0; v < 36; ++v) x[(c * 5 + d) * 36 + v] = plane[c * 36 + v];
  Rng q(14);
  auto w3 = inflate(w2, 3, strategy(Kind::NWI, ResidualInit::Zeros), q);
  auto y = ag::conv3d(ag::Var<double>::constant(x), ag::Var<double>::constant(w3),
                      ag::ConvParams::same(w3.shape()));
  auto y2 = testutil::naive_conv3d(plane, w2.reshaped({2, 2, 1, 3, 3}), {1, 1, 1}, {0, 1, 1});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t d = 1; d < 4; ++d)
      for (int64_t v = 0; v < 36; ++v)
        CHECK(y.value()[(c * 5 + d) * 36 + v] == doctest::Approx(y2[c * 36 + v]).epsilon(1e-12));
}

TEST_CASE("apply_inflation dispositions per scope") {
  auto cfg3 = nets::make_model_config(nets::Architecture::SplitShuffle, {2, 4, 4}, 1, 4, 8);
  auto cfg2 = nets::planar_twin(cfg3);
  nets::Generator<float> g2(cfg2.generator, 1);
  nets::Discriminator<float> d2(cfg2.discriminator, 2);
  nets::ParameterStore<float> src;
  for (const auto* store : {&g2.params(), &d2.params()})
    for (const auto& n : store->names()) src.add(n, store->get(n).value());

  auto run = [&](Scope scope, Kind kind) {
    nets::Generator<float> g3(cfg3.generator, 3);
    nets::Discriminator<float> d3(cfg3.discriminator, 4);
    nets::ParameterStore<float> dst;
    for (const auto* store : {&g3.params(), &d3.params()})
      for (const auto& n : store->names()) dst.add(n, store->get(n).value());
    std::map<std::string, Tensor<float>> fresh;  // the store shares nodes, so copy values
    for (const auto& n : dst.names()) fresh[n] = dst.get(n).value();
    auto rep = apply_inflation(src, dst, scope, strategy(kind), 5);
    return std::make_tuple(rep, dst, fresh);
  };
  auto deep = [](const nets::ParameterStore<float>& s, const std::string& n) {
    const auto& sh = s.get(n).shape();
    return sh.size() == 5 && sh[2] > 1 && n.ends_with(".weight");
  };
  // The constant input repeats the 2D values at every depth position.
  auto const_replicated = [&](const InflationReport& rep, const nets::ParameterStore<float>& w) {
    const auto& c3 = w.get("G.const").value();
    const auto& c2 = src.get("G.const").value();
    bool same = rep.find("G.const").disposition == "replicated";
    for (int64_t c = 0; c < c3.shape()[1]; ++c)
      for (int64_t d = 0; d < c3.shape()[2]; ++d)
        for (int64_t h = 0; h < c3.shape()[3]; ++h)
          for (int64_t x = 0; x < c3.shape()[4]; ++x) same = same && c3.at(0, c, d, h, x) == c2.at(0, c, 0, h, x);
    return same;
  };

  auto [both, both_w, both_fresh] = run(Scope::GAndD, Kind::I1);
  for (const auto& n : both_w.names()) {
    if (deep(both_w, n)) CHECK(both.find(n).disposition == "inflated");
  }
  CHECK(both.find("G.mapping.fc0.weight").disposition == "copied");
  CHECK(both_w.get("G.mapping.fc0.weight").value() == src.get("G.mapping.fc0.weight").value());
  CHECK(both.find("D.s0.conv0.branch_a.weight").disposition == "inflated");
  CHECK(const_replicated(both, both_w));

  auto [gonly, g_w, g_fresh] = run(Scope::G, Kind::I1);
  for (const auto& n : g_w.names()) {
    if (n.rfind("D.", 0) == 0) {
      CHECK(gonly.find(n).disposition == "fresh");
      CHECK(g_w.get(n).value() == g_fresh.at(n));
    } else if (deep(g_w, n)) {
      CHECK(gonly.find(n).disposition == "inflated");
    }
  }

  CHECK(const_replicated(gonly, g_w));

  auto [donly, d_w, d_fresh] = run(Scope::D, Kind::I1);
  for (const auto& n : d_w.names())
    if (n.rfind("G.", 0) == 0) CHECK(donly.find(n).disposition == "fresh");

  auto [none, none_w, none_fresh] = run(Scope::GAndD, Kind::None);
  for (const auto& n : none_w.names())
    if (deep(none_w, n)) {
      CHECK(none.find(n).disposition == "fresh");
      CHECK(none_w.get(n).value() == none_fresh.at(n));
    }
  CHECK(const_replicated(none, none_w));
}

TEST_CASE("apply_inflation names a missing 2D layer") {
  auto cfg3 = nets::make_model_config(nets::Architecture::Baseline, {2, 4, 4}, 1, 4, 8);
  nets::Generator<float> g3(cfg3.generator, 3);
  nets::ParameterStore<float> empty;
  try {
    apply_inflation(empty, g3.params(), Scope::GAndD, strategy(Kind::I1), 0);
    FAIL("expected failure");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("no layer 'G.const'") != std::string::npos);
  }
}

TEST_CASE("an I1-inflated generator reproduces its 2D twin at every depth slice") {
  // Zero residual taps and no noise: each depth slice evolves on its own from
  // the replicated constant, exactly as the planar generator does.
  for (auto arch : {nets::Architecture::Baseline, nets::Architecture::SplitShuffle}) {
    auto cfg3 = nets::make_model_config(arch, {2, 4, 4}, 2, 4, 8);
    auto twin = nets::planar_twin(cfg3);
    nets::Generator<double> g2(twin.generator, 1), g3(cfg3.generator, 2);
    apply_inflation(g2.params(), g3.params(), Scope::G, strategy(Kind::I1, ResidualInit::Zeros), 0);
    Rng r(3);
    auto z = ag::Var<double>::constant(random_tensor<double>({2, cfg3.generator.latent_dim}, r));
    const auto y2 = g2.forward(z, nullptr).value();
    const auto y3 = g3.forward(z, nullptr).value();
    REQUIRE(y3.shape()[2] == 8);
    double worst = 0;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t d = 0; d < y3.shape()[2]; ++d)
        for (int64_t h = 0; h < y3.shape()[3]; ++h)
          for (int64_t w = 0; w < y3.shape()[4]; ++w)
            worst = std::max(worst, std::abs(y3.at(n, 0, d, h, w) - y2.at(n, 0, 0, h, w)));
    CHECK(worst < 1e-12);
  }
}
