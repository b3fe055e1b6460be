// Losses, R1, Adam, data streaming, determinism and checkpoint round-trips.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "volgen/training.hpp"

using namespace volgen;
using namespace volgen::train;
using testutil::random_tensor;
using V = ag::Var<double>;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nets::ModelConfig tiny_model() {
  return nets::make_model_config(nets::Architecture::SplitShuffle, {2, 4, 4}, 1, 4, 8);
}

std::vector<Volume> tiny_volumes(int n, Index3 shape) {
  std::vector<Volume> out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.seed = static_cast<uint64_t>(i);
    s.shape = shape;
    out.push_back(preprocess(generate_phantom(s), HuWindow{}, shape));
  }
  return out;
}

}  // namespace

TEST_CASE("GAN losses at zero logits and in the limit") {
  auto z = V::constant(Tensor<double>({4, 1}));
  auto l = gan_losses(z, z);
  CHECK(l.loss_D.item() == doctest::Approx(2 * std::numbers::ln2));
  CHECK(l.loss_G.item() == doctest::Approx(std::numbers::ln2));
  auto big = gan_losses(V::constant(Tensor<double>({2, 1}, 40.0)), V::constant(Tensor<double>({2, 1}, -40.0)));
  CHECK(big.loss_D.item() < 1e-15);
}

TEST_CASE("R1 penalty closed forms") {
  Rng r(1);
  auto real = random_tensor<double>({3, 1, 2, 2, 2}, r);
  auto a = V::constant(random_tensor<double>({1, 1, 2, 2, 2}, r));
  // D(x)_n = <a, x_n>: gradient a for every sample, penalty (gamma/2) |a|^2.
  auto linear = [&](const V& x) { return ag::sum_to(ag::mul(x, a), Shape{3, 1, 1, 1, 1}); };
  double a2 = 0;
  for (int64_t i = 0; i < 8; ++i) a2 += a.value()[i] * a.value()[i];
  CHECK(r1_penalty<double>(linear, real, 0.5).item() == doctest::Approx(0.25 * a2).epsilon(1e-12));
  CHECK(r1_penalty<double>(linear, real, 0.0).item() == 0.0);
  auto constant = [&](const V& x) {
    return ag::add(ag::scale(ag::sum_to(x, Shape{3, 1, 1, 1, 1}), 0.0), V::constant(Tensor<double>({3, 1, 1, 1, 1}, 2.0)));
  };
  CHECK(r1_penalty<double>(constant, real, 1.0).item() == 0.0);
}

TEST_CASE("Adam first step moves each weight by lr against the gradient sign") {
  std::vector<V> p{V::leaf(Tensor<double>({3}, std::vector<double>{1.0, 2.0, 3.0}), true)};
  std::vector<V> g{V::constant(Tensor<double>({3}, std::vector<double>{0.5, -2.0, 0.0}))};
  Adam<double> opt(0.1);
  opt.step(p, g);
  CHECK(p[0].value()[0] == doctest::Approx(0.9));
  CHECK(p[0].value()[1] == doctest::Approx(2.1));
  CHECK(p[0].value()[2] == 3.0);
  CHECK(opt.steps() == 1);
}

TEST_CASE("total steps and config validation") {
  TrainConfig c;
  c.total_kimg = 1;
  c.batch = 16;
  CHECK(c.total_steps() == 63);
  c.total_kimg = 0.032;
  CHECK(c.total_steps() == 2);
  c.batch = 1;
  CHECK_THROWS(c.validate());
  TrainConfig d;
  d.gamma = -1;
  CHECK_THROWS(d.validate());
}

TEST_CASE("a discriminator Adam step lowers loss_D on the same batch") {
  auto cfg = tiny_model();
  nets::Discriminator<double> d(cfg.discriminator, 3);
  Rng r(4);
  auto real = V::constant(random_tensor<double>({4, 1, 4, 8, 8}, r, 0.5));
  auto fake = V::constant(random_tensor<double>({4, 1, 4, 8, 8}, r, 0.5));
  auto loss = [&] { return gan_losses(d.forward(real), d.forward(fake)).loss_D; };
  Adam<double> opt(1e-3);
  const double before = loss().item();
  auto vars = d.params().vars();
  opt.step(vars, ag::grad(loss(), vars));
  CHECK(loss().item() < before);
}

TEST_CASE("dataset batches are seed-determined epoch permutations") {
  std::vector<Tensor<float>> items;
  for (int i = 0; i < 5; ++i) items.emplace_back(Shape{1, 1, 1}, static_cast<float>(i));
  Dataset a(items, 7), b(items, 7);
  std::vector<float> seen;
  for (int64_t s = 0; s < 5; ++s) {
    auto x = a.batch(s, 2), y = b.batch(s, 2);
    CHECK(x == y);
    seen.push_back(x[0]);
    seen.push_back(x[1]);
  }
  // The first two epochs (10 draws) each visit every item once.
  for (int e = 0; e < 2; ++e) {
    std::vector<float> epoch(seen.begin() + 5 * e, seen.begin() + 5 * e + 5);
    std::sort(epoch.begin(), epoch.end());
    CHECK(epoch == std::vector<float>{0, 1, 2, 3, 4});
  }
}

TEST_CASE("generate is deterministic for a seed") {
  auto cfg = tiny_model();
  nets::Generator<float> g(cfg.generator, 5);
  auto a = generate(g, 5, 7), b = generate(g, 5, 7, 2), c = generate(g, 5, 8);
  REQUIRE(a.size() == 5);
  for (size_t i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
  CHECK_FALSE(a[0] == c[0]);
}

TEST_CASE("fixed-seed training runs are bit-identical and checkpoints round-trip") {
  auto cfg = tiny_model();
  auto vols = tiny_volumes(8, cfg.generator.output_shape());
  TrainConfig tc;
  tc.total_kimg = 0.064;
  tc.batch = 8;
  tc.snapshot_every_kimg = 0.032;
  inflation::InflationStrategy none;
  none.kind = inflation::Kind::None;
  auto a = train_3d(cfg, tc, vols, nullptr, none, inflation::Scope::GAndD, {});
  auto b = train_3d(cfg, tc, vols, nullptr, none, inflation::Scope::GAndD, {});
  auto dir = fs::temp_directory_path() / "volgen_test_train";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_archive(dir / "a.vgck", a.checkpoint);
  write_archive(dir / "b.vgck", b.checkpoint);
  CHECK(file_bytes(dir / "a.vgck") == file_bytes(dir / "b.vgck"));
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    // The kimg-0 row precedes any step and carries no losses.
    if (a.metrics[i].kimg > 0) CHECK(std::isfinite(a.metrics[i].loss_D));
    CHECK(a.metrics[i].csv() == b.metrics[i].csv());
  }

  auto loaded = load_models(read_archive(dir / "a.vgck"));
  auto direct = load_models(a.checkpoint);
  auto x = generate(loaded.G, 3, 11), y = generate(direct.G, 3, 11);
  for (size_t i = 0; i < 3; ++i) CHECK(x[i] == y[i]);
  Rng r(12);
  auto probe = ag::Var<float>::constant(random_tensor<float>({2, 1, 4, 8, 8}, r));
  CHECK(loaded.D.forward(probe).value() == direct.D.forward(probe).value());
  fs::remove_all(dir);
}

TEST_CASE("prepare_3d from a 2D checkpoint reports inflated layers") {
  auto cfg = tiny_model();
  auto twin = nets::planar_twin(cfg);
  std::vector<Slice2D> slices;
  for (const auto& v : tiny_volumes(2, cfg.generator.output_shape()))
    for (auto& s : extract_slices(v, Plane::Axial)) slices.push_back(s);
  TrainConfig tc;
  tc.total_kimg = 0.016;
  tc.batch = 8;
  tc.snapshot_every_kimg = 1;
  auto pre = pretrain_2d(twin, tc, slices, {});
  inflation::InflationStrategy i1;
  auto prep = prepare_3d(cfg, tc, &pre.checkpoint, i1, inflation::Scope::GAndD);
  REQUIRE(prep.report.has_value());
  CHECK(prep.report->find("G.s1.conv0.branch0.weight").disposition == "inflated");
  CHECK(prep.report->find("D.s0.conv0.branch_a.weight").disposition == "inflated");
  CHECK(prep.report->find("G.mapping.fc0.weight").disposition == "copied");
}
