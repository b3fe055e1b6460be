// Volume preprocessing, slicing, phantoms and the on-disk formats.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <queue>

#include "doctest.h"
#include "volgen/volume.hpp"

using namespace volgen;
namespace fs = std::filesystem;

namespace {

Volume ramp_volume(Index3 dims) {
  Tensor<float> t({dims[0], dims[1], dims[2]});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i);
  return Volume(std::move(t), Modality::CT, "ramp");
}

Volume constant_volume(Index3 dims, float v) {
  return Volume(Tensor<float>({dims[0], dims[1], dims[2]}, v), Modality::CT, "const");
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("volgen_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 26-connected components of voxels above `threshold`.
int count_components(const Volume& v, float threshold) {
  const auto [dn, hn, wn] = v.dims();
  std::vector<char> seen(static_cast<size_t>(v.voxels.numel()), 0);
  int components = 0;
  for (int64_t start = 0; start < v.voxels.numel(); ++start) {
    if (seen[start] || v.voxels[start] <= threshold) continue;
    ++components;
    std::queue<int64_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const int64_t i = q.front();
      q.pop();
      const int64_t d = i / (hn * wn), h = (i / wn) % hn, w = i % wn;
      for (int64_t a = -1; a <= 1; ++a)
        for (int64_t b = -1; b <= 1; ++b)
          for (int64_t c = -1; c <= 1; ++c) {
            const int64_t nd = d + a, nh = h + b, nw = w + c;
            if (nd < 0 || nh < 0 || nw < 0 || nd >= dn || nh >= hn || nw >= wn) continue;
            const int64_t j = (nd * hn + nh) * wn + nw;
            if (seen[j] || v.voxels[j] <= threshold) continue;
            seen[j] = 1;
            q.push(j);
          }
    }
  }
  return components;
}

}  // namespace

TEST_CASE("normalize_hu maps the window to [-1, 1] and clips") {
  Tensor<float> t({1, 1, 3}, std::vector<float>{-250.0f, 200.0f, 1000.0f});
  auto n = normalize_hu(Volume(t, Modality::CT, "v"), -250.0f, 650.0f);
  CHECK(n.at(0, 0, 0) == -1.0f);
  CHECK(n.at(0, 0, 1) == 0.0f);
  CHECK(n.at(0, 0, 2) == 1.0f);
}

TEST_CASE("normalize_hu rejects non-finite voxels and names the index") {
  Tensor<float> t({1, 2, 2}, 0.0f);
  t[3] = std::numeric_limits<float>::quiet_NaN();
  try {
    normalize_hu(Volume(t, Modality::CT, "bad"), -250.0f, 650.0f);
    FAIL("expected VolumeError");
  } catch (const VolumeError& e) {
    CHECK(std::string(e.what()).find("(0,1,1)") != std::string::npos);
  }
}

TEST_CASE("align_depth pads at the tail or keeps the centred window") {
  auto v27 = ramp_volume({27, 2, 2});
  auto a = align_depth(v27, 32);
  REQUIRE(a.depth() == 32);
  for (int64_t d = 0; d < 27; ++d) CHECK(a.at(d, 1, 1) == v27.at(d, 1, 1));
  for (int64_t d = 27; d < 32; ++d)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t w = 0; w < 2; ++w) CHECK(a.at(d, h, w) == 0.0f);

  auto v32 = ramp_volume({32, 2, 2});
  CHECK(align_depth(v32, 32).voxels == v32.voxels);

  auto v40 = ramp_volume({40, 2, 2});
  auto c = align_depth(v40, 32);
  REQUIRE(c.depth() == 32);
  for (int64_t d = 0; d < 32; ++d) CHECK(c.at(d, 0, 1) == v40.at(d + 4, 0, 1));
}

TEST_CASE("resize_inplane preserves constants and identity sizes") {
  auto big = resize_inplane(constant_volume({2, 128, 128}, 0.25f), 64, 64);
  CHECK(big.dims() == Index3{2, 64, 64});
  for (int64_t i = 0; i < big.voxels.numel(); ++i) CHECK(big.voxels[i] == doctest::Approx(0.25f));
  auto v = ramp_volume({2, 64, 64});
  CHECK(resize_inplane(v, 64, 64).voxels == v.voxels);
}

TEST_CASE("bilinear 2x2 ramp to 4x4") {
  // Aligned corners: output column j samples input x = j * (2-1)/(4-1) = j/3.
  Tensor<float> img({2, 2}, std::vector<float>{0, 1, 0, 1});
  auto r = resize_bilinear(img, 4, 4);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(r[i * 4 + j] == doctest::Approx(j / 3.0).epsilon(1e-6));
}

TEST_CASE("slice extraction counts, shapes and centres") {
  auto v = ramp_volume({32, 64, 64});
  auto ax = extract_slices(v, Plane::Axial);
  REQUIRE(ax.size() == 32);
  CHECK(ax[0].rows() == 64);
  CHECK(ax[0].cols() == 64);
  auto sag = extract_slices(v, Plane::Sagittal);
  REQUIRE(sag.size() == 64);
  CHECK(sag[0].rows() == 32);
  CHECK(sag[0].cols() == 64);
  auto cor = extract_slices(v, Plane::Coronal);
  REQUIRE(cor.size() == 64);
  CHECK(cor[5].pixels[3 * 64 + 7] == v.at(3, 5, 7));
  CHECK(sag[9].pixels[3 * 64 + 7] == v.at(3, 7, 9));

  CHECK(center_slice(v, Plane::Axial).index == 16);
  CHECK(center_slice(ramp_volume({33, 4, 4}), Plane::Axial).index == 16);
  CHECK(center_slice(v, Plane::Sagittal).index == 32);
  CHECK_THROWS_AS(slice_at(v, Plane::Axial, 32), VolumeError);
}

TEST_CASE("stack_slices inverts extract_slices on every plane") {
  auto v = ramp_volume({5, 6, 7});
  for (Plane p : {Plane::Axial, Plane::Sagittal, Plane::Coronal})
    CHECK(stack_slices(extract_slices(v, p), p, "x").voxels == v.voxels);
}

TEST_CASE("phantoms are deterministic and respect the intensity range") {
  PhantomSpec s;
  s.seed = 0;
  s.shape = {8, 16, 16};
  auto a = generate_phantom(s), b = generate_phantom(s);
  CHECK(a.voxels == b.voxels);
  s.seed = 1;
  CHECK_FALSE(generate_phantom(s).voxels == a.voxels);
  for (int64_t i = 0; i < a.voxels.numel(); ++i) {
    CHECK(a.voxels[i] >= -250.0f);
    CHECK(a.voxels[i] <= 650.0f);
  }
  auto n = normalize_hu(a, -250.0f, 650.0f);
  for (int64_t i = 0; i < n.voxels.numel(); ++i) {
    CHECK(n.voxels[i] >= -1.0f);
    CHECK(n.voxels[i] <= 1.0f);
  }
}

TEST_CASE("one ellipsoid gives one connected supra-background component") {
  PhantomSpec s;
  s.n_ellipsoids = 0;
  CHECK_THROWS(s.validate());
  s.n_ellipsoids = 1;
  s.shape = {16, 32, 32};
  for (uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    // Halfway between the background level and the dimmest possible body.
    const float threshold = -250.0f + 0.225f * 900.0f;
    CHECK(count_components(generate_phantom(s), threshold) == 1);
  }
}

TEST_CASE("volume files and manifests round-trip") {
  auto dir = scratch_dir("io");
  PhantomSpec s;
  s.shape = {4, 8, 8};
  auto v = generate_phantom(s);
  write_volume(dir, v, HuWindow{});
  auto r = read_volume(dir / (v.id + ".json"));
  CHECK(r.voxels == v.voxels);
  CHECK(r.id == v.id);
  CHECK(r.modality == Modality::SYNTH);

  DatasetManifest m;
  m.target_shape = {4, 8, 8};
  m.records.push_back({v.id + ".json", Modality::SYNTH, 4});
  write_manifest(dir / "manifest.json", m);
  auto loaded = load_dataset(dir / "manifest.json");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].voxels.shape() == Shape{4, 8, 8});
  fs::remove_all(dir);
}

TEST_CASE("a 787-volume manifest sums to 39,281 axial slices") {
  auto dir = scratch_dir("manifest");
  DatasetManifest m;
  // 787 depths in [27, 156]: 39,281 = 787 * 49 + 718.
  for (int i = 0; i < 787; ++i) {
    int64_t depth = i < 718 ? 50 : 49;
    // Opposite offsets on each pair keep the sum while spreading the depths.
    if (i < 718) depth += (i % 2 == 0 ? 1 : -1) * ((i / 2) * 7 % 22);
    m.records.push_back({"v" + std::to_string(i) + ".json", Modality::CT, depth});
    std::ofstream(dir / m.records.back().path) << "{}";  // only the record is read here
  }
  write_manifest(dir / "manifest.json", m);
  auto r = read_manifest(dir / "manifest.json");
  CHECK(r.records.size() == 787);
  for (const auto& rec : r.records) {
    CHECK(rec.depth >= 27);
    CHECK(rec.depth <= 156);
  }
  CHECK(axial_slice_count(r) == 39281);
  fs::remove_all(dir);
}

TEST_CASE("preprocess windows, resizes and aligns depth") {
  auto v = constant_volume({10, 16, 16}, 200.0f);
  auto p = preprocess(v, HuWindow{}, {12, 8, 8});
  CHECK(p.dims() == Index3{12, 8, 8});
  CHECK(p.at(5, 3, 3) == 0.0f);
  CHECK(p.at(11, 3, 3) == -1.0f);
}
