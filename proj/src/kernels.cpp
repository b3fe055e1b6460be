#include "volgen/kernels.hpp"
#include "volgen/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>
#include <cstdlib>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace volgen {

Index3 Conv3dGeometry::out_size() const {
  Index3 o{};
  for (int a = 0; a < 3; ++a) o[a] = (in_size[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1;
  return o;
}

int64_t Conv3dGeometry::input_numel() const {
  return batch * in_channels * in_size[0] * in_size[1] * in_size[2];
}

int64_t Conv3dGeometry::output_numel() const {
  const auto o = out_size();
  return batch * out_channels * o[0] * o[1] * o[2];
}

int64_t Conv3dGeometry::weight_numel() const {
  return out_channels * (in_channels / groups) * kernel[0] * kernel[1] * kernel[2];
}

void Conv3dGeometry::validate() const {
  if (batch < 1 || in_channels < 1 || out_channels < 1 || groups < 1)
    throw std::invalid_argument("conv3d: batch, channels and groups must be positive");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw std::invalid_argument("conv3d: channels (" + std::to_string(in_channels) + ", " +
                                std::to_string(out_channels) + ") not divisible by groups " +
                                std::to_string(groups));
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1 || stride[a] < 1 || pad[a] < 0 || in_size[a] < 1)
      throw std::invalid_argument("conv3d: invalid kernel/stride/pad/extent");
    if (in_size[a] + 2 * pad[a] < kernel[a])
      throw std::invalid_argument("conv3d: kernel larger than padded input");
  }
}

Conv3dGeometry Conv3dGeometry::same(int64_t batch, int64_t cin, int64_t cout, Index3 in_size,
                                    Index3 kernel, int64_t groups) {
  Conv3dGeometry g;
  g.batch = batch;
  g.in_channels = cin;
  g.out_channels = cout;
  g.groups = groups;
  g.in_size = in_size;
  g.kernel = kernel;
  for (int a = 0; a < 3; ++a) g.pad[a] = kernel[a] / 2;
  return g;
}

namespace {

void check_sizes(const Conv3dGeometry& g, size_t x, size_t w, size_t y) {
  g.validate();
  if (static_cast<int64_t>(x) != g.input_numel() || static_cast<int64_t>(w) != g.weight_numel() ||
      static_cast<int64_t>(y) != g.output_numel())
    throw std::invalid_argument("conv3d: buffer sizes do not match geometry");
}

// Range [lo, hi) of output positions along one axis whose input tap
// o*stride - pad + k falls inside [0, extent).
inline void valid_range(int64_t k, int64_t stride, int64_t pad, int64_t extent, int64_t out,
                        int64_t& lo, int64_t& hi) {
  const int64_t first = pad - k;  // o*stride >= first
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const int64_t last = extent - 1 + pad - k;  // o*stride <= last
  hi = last < 0 ? 0 : last / stride + 1;
  lo = std::min(lo, out);
  hi = std::min(hi, out);
  if (hi < lo) hi = lo;
}

}  // namespace

// The convolutions lower each (sample, group) to dense products over an
// im2col buffer: rows are (input channel, kd, kh, kw) taps, columns are the
// output positions of a slab of output depth planes.

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr int64_t kColumnBudget = int64_t{1} << 21;  // elements per im2col buffer

// Per-thread im2col buffer, reused across calls. Contents are always fully
// overwritten before being read, so it is never cleared.
template <typename T>
T* scratch(size_t n) {
  thread_local std::vector<T, DefaultInitAllocator<T>> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// Products with very few output channels skip GEMM packing: each output row
// is an axpy over the taps, each weight-gradient entry a dot product.
constexpr int64_t kSmallRows = 4;

template <typename A, typename B, typename C>
void small_product(const A& w, const B& col, C&& y) {
  constexpr int64_t kChunk = 512;
  for (int64_t c0 = 0; c0 < col.cols(); c0 += kChunk) {
    const int64_t n = std::min(kChunk, col.cols() - c0);
    for (int64_t i = 0; i < w.rows(); ++i) {
      auto yi = y.row(i).segment(c0, n);
      yi = w(i, 0) * col.row(0).segment(c0, n);
      for (int64_t r = 1; r < w.cols(); ++r) yi += w(i, r) * col.row(r).segment(c0, n);
    }
  }
}

template <typename A, typename B, typename C>
void small_product_nt_add(const A& gy, const B& col, C&& gw) {
  for (int64_t i = 0; i < gy.rows(); ++i)
    for (int64_t r = 0; r < col.rows(); ++r) gw(i, r) += gy.row(i).dot(col.row(r));
}

struct Lowering {
  Index3 out, in, kernel, stride, pad;
  int64_t cin_g, cout_g, in_vol, out_vol, kvol, rows, plane, slab;
  bool pointwise;  // 1x1x1, unit stride, no padding: the input is its own im2col

  explicit Lowering(const Conv3dGeometry& g)
      : out(g.out_size()), in(g.in_size), kernel(g.kernel), stride(g.stride), pad(g.pad) {
    cin_g = g.in_channels / g.groups;
    cout_g = g.out_channels / g.groups;
    in_vol = in[0] * in[1] * in[2];
    out_vol = out[0] * out[1] * out[2];
    kvol = kernel[0] * kernel[1] * kernel[2];
    rows = cin_g * kvol;
    plane = out[1] * out[2];
    slab = std::clamp<int64_t>(kColumnBudget / std::max<int64_t>(rows * plane, 1), 1, out[0]);
    pointwise = kvol == 1 && g.stride == Index3{1, 1, 1} && g.pad == Index3{0, 0, 0};
    if (pointwise) slab = out[0];
  }
};

// col[r, p] = x[cl, id, ih, iw] for tap r = (cl, kd, kh, kw) and output p in
// depth planes [od0, od1); zero outside the input.
template <typename T>
void im2col(const Lowering& L, const T* x, int64_t od0, int64_t od1, T* col) {
  const int64_t cols = (od1 - od0) * L.plane;
  const auto [kd_n, kh_n, kw_n] = L.kernel;
  const auto [sd, sh, sw] = L.stride;
  const auto [pd, ph, pw] = L.pad;
  const int64_t oh_n = L.out[1], ow_n = L.out[2];
  const bool same_rows = sh == 1 && sw == 1 && L.in[2] == ow_n;
  for (int64_t cl = 0; cl < L.cin_g; ++cl) {
    const T* xc = x + cl * L.in_vol;
    for (int64_t kd = 0; kd < kd_n; ++kd)
      for (int64_t kh = 0; kh < kh_n; ++kh) {
        int64_t h_lo, h_hi;
        valid_range(kh, sh, ph, L.in[1], oh_n, h_lo, h_hi);
        for (int64_t kw = 0; kw < kw_n; ++kw) {
          int64_t w_lo, w_hi;
          valid_range(kw, sw, pw, L.in[2], ow_n, w_lo, w_hi);
          T* dst = col + (((cl * kd_n + kd) * kh_n + kh) * kw_n + kw) * cols;
          for (int64_t od = od0; od < od1; ++od) {
            const int64_t id = od * sd - pd + kd;
            T* plane = dst + (od - od0) * L.plane;
            if (id < 0 || id >= L.in[0]) {
              std::fill(plane, plane + L.plane, T{0});
              continue;
            }
            std::fill(plane, plane + h_lo * ow_n, T{0});
            std::fill(plane + h_hi * ow_n, plane + L.plane, T{0});
            const int64_t off = kw - pw;
            if (same_rows) {
              // Rows are contiguous in both buffers: one shifted copy per plane,
              // then clear the columns that wrapped across row boundaries.
              const int64_t n = (h_hi - h_lo) * ow_n;
              if (n == 0) continue;
              const T* src = xc + (id * L.in[1] + h_lo - ph + kh) * ow_n + off;
              T* d = plane + h_lo * ow_n;
              std::copy(src + w_lo, src + n - (ow_n - w_hi), d + w_lo);
              for (int64_t c = 0; c < w_lo; ++c)
                for (int64_t r = c; r < n; r += ow_n) d[r] = T{0};
              for (int64_t c = w_hi; c < ow_n; ++c)
                for (int64_t r = c; r < n; r += ow_n) d[r] = T{0};
              continue;
            }
            for (int64_t oh = h_lo; oh < h_hi; ++oh) {
              const int64_t ih = oh * sh - ph + kh;
              const T* src = xc + (id * L.in[1] + ih) * L.in[2];
              T* row = plane + oh * ow_n;
              std::fill(row, row + w_lo, T{0});
              std::fill(row + w_hi, row + ow_n, T{0});
              if (sw == 1) {
                std::copy(src + w_lo + off, src + w_hi + off, row + w_lo);
              } else {
                for (int64_t ow = w_lo; ow < w_hi; ++ow) row[ow] = src[ow * sw + off];
              }
            }
          }
        }
      }
  }
}

// Adjoint of im2col: x[...] += col[r, p].
template <typename T>
void col2im_add(const Lowering& L, const T* col, int64_t od0, int64_t od1, T* x) {
  const int64_t cols = (od1 - od0) * L.plane;
  const auto [kd_n, kh_n, kw_n] = L.kernel;
  const auto [sd, sh, sw] = L.stride;
  const auto [pd, ph, pw] = L.pad;
  const int64_t oh_n = L.out[1], ow_n = L.out[2];
  for (int64_t cl = 0; cl < L.cin_g; ++cl) {
    T* xc = x + cl * L.in_vol;
    for (int64_t kd = 0; kd < kd_n; ++kd)
      for (int64_t kh = 0; kh < kh_n; ++kh) {
        int64_t h_lo, h_hi;
        valid_range(kh, sh, ph, L.in[1], oh_n, h_lo, h_hi);
        for (int64_t kw = 0; kw < kw_n; ++kw) {
          int64_t w_lo, w_hi;
          valid_range(kw, sw, pw, L.in[2], ow_n, w_lo, w_hi);
          const T* src = col + (((cl * kd_n + kd) * kh_n + kh) * kw_n + kw) * cols;
          for (int64_t od = od0; od < od1; ++od) {
            const int64_t id = od * sd - pd + kd;
            if (id < 0 || id >= L.in[0]) continue;
            const T* plane = src + (od - od0) * L.plane;
            for (int64_t oh = h_lo; oh < h_hi; ++oh) {
              const int64_t ih = oh * sh - ph + kh;
              T* dst = xc + (id * L.in[1] + ih) * L.in[2];
              const T* row = plane + oh * ow_n;
              if (sw == 1) {
                T* __restrict d = dst - pw + kw;
#pragma omp simd
                for (int64_t ow = w_lo; ow < w_hi; ++ow) d[ow] += row[ow];
              } else {
                for (int64_t ow = w_lo; ow < w_hi; ++ow) dst[ow * sw - pw + kw] += row[ow];
              }
            }
          }
        }
      }
  }
}

}  // namespace

namespace kernels {

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  check_sizes(g, x.size(), w.size(), y.size());
  const Lowering L(g);
  const int64_t jobs = g.batch * g.groups;

#pragma omp parallel
  {
    T* col = scratch<T>(L.pointwise ? 0 : static_cast<size_t>(L.rows * L.slab * L.plane));
#pragma omp for schedule(static)
    for (int64_t job = 0; job < jobs; ++job) {
      const int64_t n = job / g.groups;
      const int64_t grp = job % g.groups;
      const T* xg = x.data() + (n * g.in_channels + grp * L.cin_g) * L.in_vol;
      T* yg = y.data() + (n * g.out_channels + grp * L.cout_g) * L.out_vol;
      const MapC<T> wm(w.data() + grp * L.cout_g * L.rows, L.cout_g, L.rows,
                       Eigen::OuterStride<>(L.rows));
      for (int64_t od0 = 0; od0 < L.out[0]; od0 += L.slab) {
        const int64_t od1 = std::min(od0 + L.slab, L.out[0]);
        const int64_t cols = (od1 - od0) * L.plane;
        if (L.pointwise) {
          const MapC<T> xm(xg, L.rows, cols, Eigen::OuterStride<>(L.in_vol));
          Map<T> ym(yg, L.cout_g, cols, Eigen::OuterStride<>(L.out_vol));
          if (L.cout_g <= kSmallRows) {
            small_product(wm, xm, ym);
          } else {
            ym.noalias() = wm * xm;
          }
          continue;
        }
        im2col(L, xg, od0, od1, col);
        const MapC<T> cm(col, L.rows, cols, Eigen::OuterStride<>(cols));
        Map<T> ym(yg + od0 * L.plane, L.cout_g, cols, Eigen::OuterStride<>(L.out_vol));
        if (L.cout_g <= kSmallRows) {
          small_product(wm, cm, ym);
        } else {
          ym.noalias() = wm * cm;
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_input(const Conv3dGeometry& g, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx) {
  check_sizes(g, gx.size(), w.size(), gy.size());
  bool transposable = true;
  for (int a = 0; a < 3; ++a)
    transposable = transposable && g.stride[a] == 1 && g.pad[a] <= g.kernel[a] - 1;
  if (transposable) {
    // Unit stride: the input gradient is a forward convolution of gy with the
    // spatially flipped, in/out-swapped kernel and padding k - 1 - p.
    Conv3dGeometry t = g;
    t.in_channels = g.out_channels;
    t.out_channels = g.in_channels;
    t.in_size = g.out_size();
    for (int a = 0; a < 3; ++a) t.pad[a] = g.kernel[a] - 1 - g.pad[a];
    const int64_t cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
    const auto [kd, kh, kw] = g.kernel;
    const int64_t kvol = kd * kh * kw;
    std::vector<T> wt(w.size());
    for (int64_t grp = 0; grp < g.groups; ++grp)
      for (int64_t co = 0; co < cout_g; ++co)
        for (int64_t ci = 0; ci < cin_g; ++ci) {
          const T* src = w.data() + ((grp * cout_g + co) * cin_g + ci) * kvol;
          T* dst = wt.data() + ((grp * cin_g + ci) * cout_g + co) * kvol;
          for (int64_t k = 0; k < kvol; ++k) dst[kvol - 1 - k] = src[k];
        }
    conv3d_forward<T>(t, gy, wt, gx);
    return;
  }
  const Lowering L(g);
  const int64_t jobs = g.batch * g.groups;

#pragma omp parallel
  {
    T* col = scratch<T>(L.pointwise ? 0 : static_cast<size_t>(L.rows * L.slab * L.plane));
#pragma omp for schedule(static)
    for (int64_t job = 0; job < jobs; ++job) {
      const int64_t n = job / g.groups;
      const int64_t grp = job % g.groups;
      T* xg = gx.data() + (n * g.in_channels + grp * L.cin_g) * L.in_vol;
      const T* yg = gy.data() + (n * g.out_channels + grp * L.cout_g) * L.out_vol;
      std::fill(xg, xg + L.cin_g * L.in_vol, T{0});
      const MapC<T> wm(w.data() + grp * L.cout_g * L.rows, L.cout_g, L.rows,
                       Eigen::OuterStride<>(L.rows));
      for (int64_t od0 = 0; od0 < L.out[0]; od0 += L.slab) {
        const int64_t od1 = std::min(od0 + L.slab, L.out[0]);
        const int64_t cols = (od1 - od0) * L.plane;
        const MapC<T> gm(yg + od0 * L.plane, L.cout_g, cols, Eigen::OuterStride<>(L.out_vol));
        Map<T> cm(col, L.rows, cols, Eigen::OuterStride<>(cols));
        cm.noalias() = wm.transpose() * gm;
        col2im_add(L, col, od0, od1, xg);
      }
    }
  }
}

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw) {
  check_sizes(g, x.size(), gw.size(), gy.size());
  const Lowering L(g);
  const int64_t wsize = g.weight_numel();
  // One partial per sample, reduced in sample order afterwards so the
  // result does not depend on the thread count.
  std::vector<T> partial(static_cast<size_t>(g.batch * wsize), T{0});

#pragma omp parallel
  {
    T* col = scratch<T>(L.pointwise ? 0 : static_cast<size_t>(L.rows * L.slab * L.plane));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
      for (int64_t grp = 0; grp < g.groups; ++grp) {
        const T* xg = x.data() + (n * g.in_channels + grp * L.cin_g) * L.in_vol;
        const T* yg = gy.data() + (n * g.out_channels + grp * L.cout_g) * L.out_vol;
        Map<T> pm(partial.data() + n * wsize + grp * L.cout_g * L.rows, L.cout_g, L.rows,
                  Eigen::OuterStride<>(L.rows));
        for (int64_t od0 = 0; od0 < L.out[0]; od0 += L.slab) {
          const int64_t od1 = std::min(od0 + L.slab, L.out[0]);
          const int64_t cols = (od1 - od0) * L.plane;
          const MapC<T> gm(yg + od0 * L.plane, L.cout_g, cols, Eigen::OuterStride<>(L.out_vol));
          if (L.pointwise) {
            const MapC<T> xm(xg, L.rows, cols, Eigen::OuterStride<>(L.in_vol));
            if (L.cout_g <= kSmallRows) {
              small_product_nt_add(gm, xm, pm);
            } else {
              pm.noalias() += gm * xm.transpose();
            }
            continue;
          }
          im2col(L, xg, od0, od1, col);
          const MapC<T> cm(col, L.rows, cols, Eigen::OuterStride<>(cols));
          if (L.cout_g <= kSmallRows) {
            small_product_nt_add(gm, cm, pm);
          } else {
            pm.noalias() += gm * cm.transpose();
          }
        }
      }
    }
  }
  std::fill(gw.begin(), gw.end(), T{0});
  for (int64_t n = 0; n < g.batch; ++n) {
    const T* p = partial.data() + n * wsize;
    for (int64_t k = 0; k < wsize; ++k) gw[static_cast<size_t>(k)] += p[k];
  }
}

template <typename T>
void upsample_nearest(int64_t planes, Index3 in_size, Index3 factor, std::span<const T> x,
                      std::span<T> y) {
  const auto [d_n, h_n, w_n] = in_size;
  const auto [fd, fh, fw] = factor;
  const int64_t od_n = d_n * fd, oh_n = h_n * fh, ow_n = w_n * fw;
  if (static_cast<int64_t>(x.size()) != planes * d_n * h_n * w_n ||
      static_cast<int64_t>(y.size()) != planes * od_n * oh_n * ow_n)
    throw std::invalid_argument("upsample_nearest: buffer sizes do not match");
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const T* xi = x.data() + p * d_n * h_n * w_n;
    T* yo = y.data() + p * od_n * oh_n * ow_n;
    for (int64_t od = 0; od < od_n; ++od)
      for (int64_t oh = 0; oh < oh_n; ++oh) {
        const T* xrow = xi + ((od / fd) * h_n + oh / fh) * w_n;
        T* yrow = yo + (od * oh_n + oh) * ow_n;
        for (int64_t ow = 0; ow < ow_n; ++ow) yrow[ow] = xrow[ow / fw];
      }
  }
}

template <typename T>
void sum_pool(int64_t planes, Index3 out_size, Index3 factor, std::span<const T> x,
              std::span<T> y) {
  const auto [d_n, h_n, w_n] = out_size;
  const auto [fd, fh, fw] = factor;
  const int64_t id_n = d_n * fd, ih_n = h_n * fh, iw_n = w_n * fw;
  if (static_cast<int64_t>(y.size()) != planes * d_n * h_n * w_n ||
      static_cast<int64_t>(x.size()) != planes * id_n * ih_n * iw_n)
    throw std::invalid_argument("sum_pool: buffer sizes do not match");
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const T* xi = x.data() + p * id_n * ih_n * iw_n;
    T* yo = y.data() + p * d_n * h_n * w_n;
    for (int64_t d = 0; d < d_n; ++d)
      for (int64_t h = 0; h < h_n; ++h)
        for (int64_t w = 0; w < w_n; ++w) {
          T acc{0};
          for (int64_t a = 0; a < fd; ++a)
            for (int64_t b = 0; b < fh; ++b) {
              const T* row = xi + ((d * fd + a) * ih_n + h * fh + b) * iw_n + w * fw;
              for (int64_t c = 0; c < fw; ++c) acc += row[c];
            }
          yo[(d * h_n + h) * w_n + w] = acc;
        }
  }
}

template <typename T>
void matmul(int64_t m, int64_t k, int64_t n, std::span<const T> a, std::span<const T> b,
            std::span<T> c) {
  if (static_cast<int64_t>(a.size()) != m * k || static_cast<int64_t>(b.size()) != k * n ||
      static_cast<int64_t>(c.size()) != m * n)
    throw std::invalid_argument("matmul: buffer sizes do not match");
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* __restrict crow = c.data() + i * n;
    std::fill(crow, crow + n, T{0});
    for (int64_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* __restrict brow = b.data() + p * n;
#pragma omp simd
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#define VOLGEN_INSTANTIATE(T)                                                                   \
  template void conv3d_forward<T>(const Conv3dGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                                \
  template void conv3d_backward_input<T>(const Conv3dGeometry&, std::span<const T>,             \
                                         std::span<const T>, std::span<T>);                     \
  template void conv3d_backward_weight<T>(const Conv3dGeometry&, std::span<const T>,            \
                                          std::span<const T>, std::span<T>);                    \
  template void upsample_nearest<T>(int64_t, Index3, Index3, std::span<const T>, std::span<T>); \
  template void sum_pool<T>(int64_t, Index3, Index3, std::span<const T>, std::span<T>);         \
  template void matmul<T>(int64_t, int64_t, int64_t, std::span<const T>, std::span<const T>,    \
                          std::span<T>);

VOLGEN_INSTANTIATE(float)
VOLGEN_INSTANTIATE(double)
#undef VOLGEN_INSTANTIATE

}  // namespace kernels

void configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* v = std::getenv("VOLGEN_DETERMINISTIC"); v && std::string(v) == "1")
    omp_set_num_threads(1);
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace volgen
