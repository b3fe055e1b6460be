#include "volgen/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "volgen/rng.hpp"

namespace volgen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    case Modality::SYNTH: return "SYNTH";
  }
  return "SYNTH";
}

std::string to_string(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Sagittal: return "sagittal";
    case Plane::Coronal: return "coronal";
  }
  return "axial";
}

Modality parse_modality(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MR") return Modality::MR;
  if (s == "SYNTH") return Modality::SYNTH;
  throw VolumeError("unknown modality '" + s + "'");
}

Plane parse_plane(const std::string& s) {
  if (s == "axial") return Plane::Axial;
  if (s == "sagittal") return Plane::Sagittal;
  if (s == "coronal") return Plane::Coronal;
  throw VolumeError("unknown plane '" + s + "' (expected axial, sagittal or coronal)");
}

Volume::Volume(Tensor<float> v, Modality m, std::string i)
    : voxels(std::move(v)), modality(m), id(std::move(i)) {
  if (voxels.rank() != 3 || voxels.dim(0) < 1 || voxels.dim(1) < 1 || voxels.dim(2) < 1)
    throw VolumeError("volume '" + id + "' needs three positive extents, got " +
                      shape_str(voxels.shape()));
}

void PhantomSpec::validate() const {
  for (auto e : shape)
    if (e < 1) throw VolumeError("phantom shape components must be positive");
  if (n_ellipsoids < 1) throw VolumeError("phantom needs at least one ellipsoid");
  if (!(intensity_lo < intensity_hi)) throw VolumeError("phantom intensity range needs lo < hi");
}

Volume normalize_hu(const Volume& v, float lo, float hi) {
  if (!(lo < hi)) throw VolumeError("normalize_hu: window needs lo < hi");
  Volume out = v;
  const float span = hi - lo;
  for (int64_t d = 0; d < v.depth(); ++d)
    for (int64_t h = 0; h < v.height(); ++h)
      for (int64_t w = 0; w < v.width(); ++w) {
        const float x = v.at(d, h, w);
        if (!std::isfinite(x))
          throw VolumeError("normalize_hu: non-finite voxel in '" + v.id + "' at (" +
                            std::to_string(d) + "," + std::to_string(h) + "," +
                            std::to_string(w) + ")");
        const float c = std::clamp(x, lo, hi);
        out.at(d, h, w) = std::clamp(2.0f * (c - lo) / span - 1.0f, -1.0f, 1.0f);
      }
  return out;
}

Volume align_depth(const Volume& v, int64_t target_depth, float pad_value) {
  if (target_depth < 1) throw VolumeError("align_depth: target depth must be >= 1");
  const int64_t depth = v.depth();
  if (depth == target_depth) return v;
  const int64_t plane = v.height() * v.width();
  Tensor<float> out({target_depth, v.height(), v.width()}, pad_value);
  if (depth < target_depth) {
    std::copy_n(v.voxels.data(), depth * plane, out.data());
  } else {
    const int64_t front = (depth - target_depth) / 2;
    std::copy_n(v.voxels.data() + front * plane, target_depth * plane, out.data());
  }
  return Volume(std::move(out), v.modality, v.id);
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int64_t rows, int64_t cols) {
  if (rows < 1 || cols < 1) throw VolumeError("resize: target extents must be >= 1");
  const int64_t in_r = image.dim(0), in_c = image.dim(1);
  if (in_r == rows && in_c == cols) return image;
  Tensor<float> out({rows, cols});
  const double sr = rows > 1 ? static_cast<double>(in_r - 1) / static_cast<double>(rows - 1) : 0.0;
  const double sc = cols > 1 ? static_cast<double>(in_c - 1) / static_cast<double>(cols - 1) : 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double y = rows > 1 ? r * sr : (in_r - 1) / 2.0;
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(y), in_r - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, in_r - 1);
    const double fy = y - static_cast<double>(y0);
    for (int64_t c = 0; c < cols; ++c) {
      const double x = cols > 1 ? c * sc : (in_c - 1) / 2.0;
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(x), in_c - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, in_c - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1 - fx) * image[y0 * in_c + x0] + fx * image[y0 * in_c + x1];
      const double bot = (1 - fx) * image[y1 * in_c + x0] + fx * image[y1 * in_c + x1];
      out[r * cols + c] = static_cast<float>((1 - fy) * top + fy * bot);
    }
  }
  return out;
}

Volume resize_inplane(const Volume& v, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw VolumeError("resize_inplane: extents must be >= 1");
  if (height == v.height() && width == v.width()) return v;
  Tensor<float> out({v.depth(), height, width});
  const int64_t in_plane = v.height() * v.width();
  for (int64_t d = 0; d < v.depth(); ++d) {
    Tensor<float> slice({v.height(), v.width()});
    std::copy_n(v.voxels.data() + d * in_plane, in_plane, slice.data());
    const auto r = resize_bilinear(slice, height, width);
    std::copy_n(r.data(), height * width, out.data() + d * height * width);
  }
  return Volume(std::move(out), v.modality, v.id);
}

Volume preprocess(const Volume& v, const HuWindow& window, Index3 target_shape) {
  Volume n = normalize_hu(v, window.lo, window.hi);
  n = resize_inplane(n, target_shape[1], target_shape[2]);
  return align_depth(n, target_shape[0], -1.0f);
}

int64_t plane_extent(const Volume& v, Plane p) {
  switch (p) {
    case Plane::Axial: return v.depth();
    case Plane::Sagittal: return v.width();
    case Plane::Coronal: return v.height();
  }
  return 0;
}

Slice2D slice_at(const Volume& v, Plane p, int64_t index) {
  if (index < 0 || index >= plane_extent(v, p))
    throw VolumeError("slice index " + std::to_string(index) + " out of range for " +
                      to_string(p) + " plane");
  Slice2D s;
  s.plane = p;
  s.source_id = v.id;
  s.index = index;
  switch (p) {
    case Plane::Axial:
      s.pixels = Tensor<float>({v.height(), v.width()});
      for (int64_t h = 0; h < v.height(); ++h)
        for (int64_t w = 0; w < v.width(); ++w) s.pixels[h * v.width() + w] = v.at(index, h, w);
      break;
    case Plane::Sagittal:
      s.pixels = Tensor<float>({v.depth(), v.height()});
      for (int64_t d = 0; d < v.depth(); ++d)
        for (int64_t h = 0; h < v.height(); ++h) s.pixels[d * v.height() + h] = v.at(d, h, index);
      break;
    case Plane::Coronal:
      s.pixels = Tensor<float>({v.depth(), v.width()});
      for (int64_t d = 0; d < v.depth(); ++d)
        for (int64_t w = 0; w < v.width(); ++w) s.pixels[d * v.width() + w] = v.at(d, index, w);
      break;
  }
  return s;
}

std::vector<Slice2D> extract_slices(const Volume& v, Plane p) {
  std::vector<Slice2D> out;
  const int64_t n = plane_extent(v, p);
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(slice_at(v, p, i));
  return out;
}

Slice2D center_slice(const Volume& v, Plane p) { return slice_at(v, p, plane_extent(v, p) / 2); }

Volume stack_slices(const std::vector<Slice2D>& slices, Plane p, const std::string& id) {
  if (slices.empty()) throw VolumeError("stack_slices: no slices");
  const int64_t n = static_cast<int64_t>(slices.size());
  const int64_t r = slices[0].rows(), c = slices[0].cols();
  Index3 dims{};
  switch (p) {
    case Plane::Axial: dims = {n, r, c}; break;
    case Plane::Sagittal: dims = {r, c, n}; break;
    case Plane::Coronal: dims = {r, n, c}; break;
  }
  Volume v(Tensor<float>({dims[0], dims[1], dims[2]}), Modality::SYNTH, id);
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = slices[static_cast<size_t>(i)];
    if (s.rows() != r || s.cols() != c) throw VolumeError("stack_slices: inconsistent slices");
    for (int64_t a = 0; a < r; ++a)
      for (int64_t b = 0; b < c; ++b) {
        const float x = s.pixels[a * c + b];
        switch (p) {
          case Plane::Axial: v.at(i, a, b) = x; break;
          case Plane::Sagittal: v.at(a, b, i) = x; break;
          case Plane::Coronal: v.at(a, i, b) = x; break;
        }
      }
  }
  return v;
}

Volume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double lo = spec.intensity_lo, hi = spec.intensity_hi, range = hi - lo;
  const double background = lo + 0.1 * range;
  const double noise_sigma = 0.01 * range;
  constexpr double kEdge = 0.08;  // sigmoid width of the ellipsoid boundary, in radius units

  struct Ellipsoid {
    std::array<double, 3> center, axes;
    double intensity;
  };
  std::vector<Ellipsoid> blobs;
  Ellipsoid body{};
  for (int a = 0; a < 3; ++a) {
    body.center[a] = 0.5 + rng.uniform(-0.08, 0.08);
    body.axes[a] = rng.uniform(0.28, 0.42);
  }
  body.intensity = lo + rng.uniform(0.35, 0.55) * range;
  blobs.push_back(body);
  for (int k = 1; k < spec.n_ellipsoids; ++k) {
    Ellipsoid e{};
    for (int a = 0; a < 3; ++a) {
      e.center[a] = body.center[a] + rng.uniform(-0.45, 0.45) * body.axes[a];
      e.axes[a] = rng.uniform(0.08, 0.2);
    }
    e.intensity = lo + rng.uniform(0.6, 0.95) * range;
    blobs.push_back(e);
  }

  const auto [dn, hn, wn] = spec.shape;
  Tensor<float> vox({dn, hn, wn});
  for (int64_t d = 0; d < dn; ++d)
    for (int64_t h = 0; h < hn; ++h)
      for (int64_t w = 0; w < wn; ++w) {
        const std::array<double, 3> p{(d + 0.5) / dn, (h + 0.5) / hn, (w + 0.5) / wn};
        double value = background;
        for (const auto& e : blobs) {
          double r2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double t = (p[a] - e.center[a]) / e.axes[a];
            r2 += t * t;
          }
          const double m = 1.0 / (1.0 + std::exp((std::sqrt(r2) - 1.0) / kEdge));
          value = std::max(value, background + (e.intensity - background) * m);
        }
        value += noise_sigma * rng.normal();
        vox[(d * hn + h) * wn + w] = static_cast<float>(std::clamp(value, lo, hi));
      }
  return Volume(std::move(vox), Modality::SYNTH, "phantom_" + std::to_string(spec.seed));
}

namespace {

void write_le_floats(std::ostream& os, std::span<const float> data) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
  } else {
    for (float f : data) {
      auto u = std::bit_cast<uint32_t>(f);
      u = __builtin_bswap32(u);
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

void read_le_floats(std::istream& is, std::span<float> data) {
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : data) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<uint32_t>(f)));
  }
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw VolumeError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw VolumeError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw VolumeError("cannot write " + p.string());
  out << text;
}

}  // namespace

void write_volume(const fs::path& dir, const Volume& v, const HuWindow& window) {
  fs::create_directories(dir);
  json header = {{"dims", {v.depth(), v.height(), v.width()}},
                 {"dtype", "f32le"},
                 {"modality", to_string(v.modality)},
                 {"hu_window", {window.lo, window.hi}}};
  write_text(dir / (v.id + ".json"), header.dump(2) + "\n");
  std::ofstream raw(dir / (v.id + ".raw"), std::ios::binary);
  if (!raw) throw VolumeError("cannot write " + (dir / (v.id + ".raw")).string());
  write_le_floats(raw, v.voxels.span());
}

Volume read_volume(const fs::path& header_path) {
  const json h = read_json(header_path);
  if (h.value("dtype", "") != "f32le")
    throw VolumeError(header_path.string() + ": unsupported dtype (expected f32le)");
  const auto dims = h.at("dims").get<std::vector<int64_t>>();
  if (dims.size() != 3) throw VolumeError(header_path.string() + ": dims must have 3 entries");
  Tensor<float> vox({dims[0], dims[1], dims[2]});
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw VolumeError("missing voxel file " + raw_path.string());
  read_le_floats(raw, vox.span());
  if (!raw) throw VolumeError(raw_path.string() + ": truncated voxel data");
  return Volume(std::move(vox), parse_modality(h.value("modality", "SYNTH")),
                header_path.stem().string());
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  json records = json::array();
  for (const auto& r : m.records)
    records.push_back({{"path", r.path}, {"modality", to_string(r.modality)}, {"depth", r.depth}});
  json doc = {{"records", records},
              {"target_shape", {m.target_shape[0], m.target_shape[1], m.target_shape[2]}},
              {"hu_window", {m.hu_window.lo, m.hu_window.hi}}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, doc.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& path) {
  const json doc = read_json(path);
  DatasetManifest m;
  try {
    for (const auto& r : doc.at("records"))
      m.records.push_back({r.at("path").get<std::string>(),
                           parse_modality(r.value("modality", "SYNTH")),
                           r.value("depth", int64_t{0})});
    const auto ts = doc.at("target_shape").get<std::vector<int64_t>>();
    if (ts.size() != 3) throw VolumeError("target_shape must have 3 entries");
    m.target_shape = {ts[0], ts[1], ts[2]};
    if (doc.contains("hu_window")) {
      const auto hw = doc.at("hu_window").get<std::vector<float>>();
      if (hw.size() != 2 || !(hw[0] < hw[1])) throw VolumeError("hu_window must be [lo, hi]");
      m.hu_window = {hw[0], hw[1]};
    }
  } catch (const json::exception& e) {
    throw VolumeError("malformed manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  for (const auto& r : m.records)
    if (!fs::exists(base / r.path))
      throw VolumeError("manifest " + path.string() + " lists missing volume " + r.path);
  return m;
}

std::vector<Volume> load_dataset(const fs::path& manifest_path) {
  const auto m = read_manifest(manifest_path);
  std::vector<Volume> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    Volume v = read_volume(manifest_path.parent_path() / r.path);
    v.modality = r.modality;
    out.push_back(preprocess(v, m.hu_window, m.target_shape));
  }
  return out;
}

int64_t axial_slice_count(const DatasetManifest& m) {
  int64_t n = 0;
  for (const auto& r : m.records) n += r.depth;
  return n;
}

void write_pgm(const fs::path& path, const Tensor<float>& image, float lo, float hi) {
  if (image.rank() != 2) throw VolumeError("write_pgm expects a 2D image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VolumeError("cannot write " + path.string());
  out << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) {
    const float t = std::clamp((image[i] - lo) / (hi - lo), 0.0f, 1.0f);
    bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(t * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace volgen
