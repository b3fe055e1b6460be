#pragma once

// Compute kernels for the network layers. The functions in `kernels` are the
// OpenMP-parallel versions used at run time; `reference` holds plain serial
// loops with the same signatures that the tests and benchmarks compare
// against.
//
// Every parallel loop partitions the output so that each element is written by
// exactly one thread in a fixed summation order, which keeps results
// independent of the thread count.

#include <array>
#include <cstdint>
#include <span>

namespace volgen {

using Index3 = std::array<int64_t, 3>;

/// Geometry of a grouped 3D cross-correlation over NCDHW tensors with
/// weights laid out as (C_out, C_in / groups, k_d, k_h, k_w).
struct Conv3dGeometry {
  int64_t batch = 1;
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t groups = 1;
  Index3 in_size{1, 1, 1};
  Index3 kernel{1, 1, 1};
  Index3 stride{1, 1, 1};
  Index3 pad{0, 0, 0};

  Index3 out_size() const;
  int64_t input_numel() const;
  int64_t output_numel() const;
  int64_t weight_numel() const;
  /// Throws std::invalid_argument on inconsistent channel/group/extent settings.
  void validate() const;

  /// "Same" padding, unit stride.
  static Conv3dGeometry same(int64_t batch, int64_t cin, int64_t cout, Index3 in_size,
                             Index3 kernel, int64_t groups = 1);
};

namespace kernels {

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);

/// Gradient w.r.t. the input, i.e. the transposed convolution of `gy`.
template <typename T>
void conv3d_backward_input(const Conv3dGeometry& g, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx);

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw);

/// Nearest-neighbour upsampling of `planes` independent D*H*W grids.
template <typename T>
void upsample_nearest(int64_t planes, Index3 in_size, Index3 factor, std::span<const T> x,
                      std::span<T> y);

/// Block sum over non-overlapping factor-sized cells (adjoint of upsample_nearest).
template <typename T>
void sum_pool(int64_t planes, Index3 out_size, Index3 factor, std::span<const T> x,
              std::span<T> y);

/// c[M,N] = a[M,K] * b[K,N]
template <typename T>
void matmul(int64_t m, int64_t k, int64_t n, std::span<const T> a, std::span<const T> b,
            std::span<T> c);

}  // namespace kernels

namespace reference {

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);
template <typename T>
void conv3d_backward_input(const Conv3dGeometry& g, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx);
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw);
template <typename T>
void upsample_nearest(int64_t planes, Index3 in_size, Index3 factor, std::span<const T> x,
                      std::span<T> y);
template <typename T>
void sum_pool(int64_t planes, Index3 out_size, Index3 factor, std::span<const T> x,
              std::span<T> y);
template <typename T>
void matmul(int64_t m, int64_t k, int64_t n, std::span<const T> a, std::span<const T> b,
            std::span<T> c);

}  // namespace reference

/// Thread control. VOLGEN_DETERMINISTIC=1 pins the process to one thread.
void configure_threads_from_env();
int max_threads();

}  // namespace volgen
