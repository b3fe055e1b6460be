#pragma once

// 2D -> 3D convolution weight inflation and its application to whole models.

#include <cstdint>
#include <string>
#include <vector>

#include "volgen/nets.hpp"
#include "volgen/rng.hpp"
#include "volgen/tensor.hpp"

namespace volgen::inflation {

enum class Kind { None, I1, I2, I3, ASC, NWI };
enum class ResidualInit { Gaussian, Zeros };
enum class Scope { G, D, GAndD };

struct InflationStrategy {
  Kind kind = Kind::I1;
  int T = 3;
  double sigma0 = 0.1;
  ResidualInit residual_init = ResidualInit::Gaussian;

  void validate() const;
};

std::string to_string(Kind k);
std::string to_string(Scope s);
std::string to_string(ResidualInit r);
Kind parse_kind(const std::string& s);
Scope parse_scope(const std::string& s);
ResidualInit parse_residual_init(const std::string& s);

/// Depth-slice coefficients of NWI for a kernel of depth `kd`:
/// (2T-1)/T at the centre, -1/T elsewhere.
std::vector<double> nwi_coefficients(int T, int64_t kd);

/// Inflates a 2D block (C_O, C_I, k_h, k_w) or its planar 3D form
/// (C_O, C_I, 1, k_h, k_w) to (C_O, C_I, kd, k_h, k_w). The centre index is
/// floor(k/2); I2 writes {centre-1, centre}. ASC needs a cubic kernel.
template <typename T>
Tensor<T> inflate(const Tensor<T>& w2, int64_t kd, const InflationStrategy& s, Rng& rng);

struct LayerDisposition {
  std::string layer;
  std::string disposition;  // inflated | replicated | copied | fresh
  std::string strategy;
};

struct InflationReport {
  std::vector<LayerDisposition> entries;

  int64_t count(const std::string& disposition) const;
  const LayerDisposition& find(const std::string& layer) const;
  std::string to_json() const;
};

/// Loads 2D-twin weights into a 3D parameter store. Names are shared between
/// the twin and the 3D model. Depth-1 conv kernels feeding deeper 3D kernels
/// are inflated; other depth-1 tensors with a deeper 3D counterpart (the
/// generator's constant input) are repeated along depth; equal shapes are
/// copied; anything else, and every parameter of a network outside `scope`,
/// keeps its fresh initialisation.
template <typename T>
InflationReport apply_inflation(const nets::ParameterStore<T>& src2d, nets::ParameterStore<T>& dst3d,
                                Scope scope, const InflationStrategy& strategy, uint64_t seed);

}  // namespace volgen::inflation
