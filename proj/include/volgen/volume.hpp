#pragma once

// Volume ingestion and preprocessing: HU windowing, depth alignment, in-plane
// resampling, slice extraction, synthetic phantoms, and the on-disk volume
// and manifest formats.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "volgen/kernels.hpp"
#include "volgen/tensor.hpp"

namespace volgen {

enum class Modality { CT, MR, SYNTH };
enum class Plane { Axial, Sagittal, Coronal };

std::string to_string(Modality m);
std::string to_string(Plane p);
Modality parse_modality(const std::string& s);
Plane parse_plane(const std::string& s);

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar voxel grid indexed (depth, height, width).
struct Volume {
  Tensor<float> voxels;  // shape {D, H, W}
  Modality modality = Modality::SYNTH;
  std::string id;

  Volume() = default;
  Volume(Tensor<float> v, Modality m, std::string i);

  int64_t depth() const { return voxels.dim(0); }
  int64_t height() const { return voxels.dim(1); }
  int64_t width() const { return voxels.dim(2); }
  Index3 dims() const { return {depth(), height(), width()}; }
  float at(int64_t d, int64_t h, int64_t w) const {
    return voxels[(d * height() + h) * width() + w];
  }
  float& at(int64_t d, int64_t h, int64_t w) { return voxels[(d * height() + h) * width() + w]; }
};

/// A 2D image cut from a volume. Axial slices are (H, W), sagittal (D, H),
/// coronal (D, W).
struct Slice2D {
  Tensor<float> pixels;  // shape {rows, cols}
  Plane plane = Plane::Axial;
  std::string source_id;
  int64_t index = 0;

  int64_t rows() const { return pixels.dim(0); }
  int64_t cols() const { return pixels.dim(1); }
};

struct PhantomSpec {
  uint64_t seed = 0;
  Index3 shape{32, 64, 64};
  int n_ellipsoids = 3;
  float intensity_lo = -250.0f;
  float intensity_hi = 650.0f;

  void validate() const;
};

struct HuWindow {
  float lo = -250.0f;
  float hi = 650.0f;
};

struct DatasetRecord {
  std::string path;  // volume header (.json), relative to the manifest directory
  Modality modality = Modality::SYNTH;
  int64_t depth = 0;
};

struct DatasetManifest {
  std::vector<DatasetRecord> records;
  Index3 target_shape{32, 64, 64};
  HuWindow hu_window;
};

// Preprocessing operations.
Volume normalize_hu(const Volume& v, float lo, float hi);
/// Pads at the tail with `pad_value` or keeps the centred window of slices.
Volume align_depth(const Volume& v, int64_t target_depth, float pad_value = 0.0f);
/// Bilinear resampling of every axial slice (align-corners sampling grid).
Volume resize_inplane(const Volume& v, int64_t height, int64_t width);
Tensor<float> resize_bilinear(const Tensor<float>& image, int64_t rows, int64_t cols);

/// Window to [-1, 1], resize in-plane, then align the depth (padding with -1,
/// i.e. the normalized window floor).
Volume preprocess(const Volume& v, const HuWindow& window, Index3 target_shape);

int64_t plane_extent(const Volume& v, Plane p);
Slice2D slice_at(const Volume& v, Plane p, int64_t index);
std::vector<Slice2D> extract_slices(const Volume& v, Plane p);
Slice2D center_slice(const Volume& v, Plane p);
/// Inverse of extract_slices.
Volume stack_slices(const std::vector<Slice2D>& slices, Plane p, const std::string& id);

Volume generate_phantom(const PhantomSpec& spec);

// Portable format: <id>.json header + <id>.raw little-endian f32 voxels.
void write_volume(const std::filesystem::path& dir, const Volume& v, const HuWindow& window);
Volume read_volume(const std::filesystem::path& header_path);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::vector<Volume> load_dataset(const std::filesystem::path& manifest_path);
int64_t axial_slice_count(const DatasetManifest& m);

/// Binary PGM (P5) export of a 2D image, linearly mapping [lo, hi] to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor<float>& image, float lo,
               float hi);

}  // namespace volgen
