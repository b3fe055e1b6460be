// Straightforward serial loops, one output element at a time. Kept as the
// oracle for the parallel kernels; not used on the training path.

#include <stdexcept>

#include "volgen/kernels.hpp"

namespace volgen::reference {

namespace {

struct Dims {
  int64_t od, oh, ow, id, ih, iw, kd, kh, kw, cin_g, cout_g;
};

Dims dims_of(const Conv3dGeometry& g) {
  g.validate();
  const auto o = g.out_size();
  return {o[0],         o[1],         o[2],         g.in_size[0],
          g.in_size[1], g.in_size[2], g.kernel[0],  g.kernel[1],
          g.kernel[2],  g.in_channels / g.groups, g.out_channels / g.groups};
}

bool inside(int64_t v, int64_t extent) { return v >= 0 && v < extent; }

}  // namespace

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const Dims s = dims_of(g);
  if (static_cast<int64_t>(y.size()) != g.output_numel() ||
      static_cast<int64_t>(x.size()) != g.input_numel() ||
      static_cast<int64_t>(w.size()) != g.weight_numel())
    throw std::invalid_argument("reference conv3d: buffer sizes do not match geometry");
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t o = 0; o < g.out_channels; ++o)
      for (int64_t od = 0; od < s.od; ++od)
        for (int64_t oh = 0; oh < s.oh; ++oh)
          for (int64_t ow = 0; ow < s.ow; ++ow) {
            T acc{0};
            const int64_t grp = o / s.cout_g;
            for (int64_t cl = 0; cl < s.cin_g; ++cl) {
              const int64_t ci = grp * s.cin_g + cl;
              for (int64_t kd = 0; kd < s.kd; ++kd)
                for (int64_t kh = 0; kh < s.kh; ++kh)
                  for (int64_t kw = 0; kw < s.kw; ++kw) {
                    const int64_t id = od * g.stride[0] - g.pad[0] + kd;
                    const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
                    const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                    if (!inside(id, s.id) || !inside(ih, s.ih) || !inside(iw, s.iw)) continue;
                    const T xv = x[(((n * g.in_channels + ci) * s.id + id) * s.ih + ih) * s.iw + iw];
                    const T wv = w[(((o * s.cin_g + cl) * s.kd + kd) * s.kh + kh) * s.kw + kw];
                    acc += wv * xv;
                  }
            }
            y[(((n * g.out_channels + o) * s.od + od) * s.oh + oh) * s.ow + ow] = acc;
          }
}

template <typename T>
void conv3d_backward_input(const Conv3dGeometry& g, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx) {
  const Dims s = dims_of(g);
  for (auto& v : gx) v = T{0};
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t o = 0; o < g.out_channels; ++o)
      for (int64_t od = 0; od < s.od; ++od)
        for (int64_t oh = 0; oh < s.oh; ++oh)
          for (int64_t ow = 0; ow < s.ow; ++ow) {
            const T gv = gy[(((n * g.out_channels + o) * s.od + od) * s.oh + oh) * s.ow + ow];
            const int64_t grp = o / s.cout_g;
            for (int64_t cl = 0; cl < s.cin_g; ++cl)
              for (int64_t kd = 0; kd < s.kd; ++kd)
                for (int64_t kh = 0; kh < s.kh; ++kh)
                  for (int64_t kw = 0; kw < s.kw; ++kw) {
                    const int64_t id = od * g.stride[0] - g.pad[0] + kd;
                    const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
                    const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                    if (!inside(id, s.id) || !inside(ih, s.ih) || !inside(iw, s.iw)) continue;
                    const int64_t ci = grp * s.cin_g + cl;
                    gx[(((n * g.in_channels + ci) * s.id + id) * s.ih + ih) * s.iw + iw] +=
                        gv * w[(((o * s.cin_g + cl) * s.kd + kd) * s.kh + kh) * s.kw + kw];
                  }
          }
}

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw) {
  const Dims s = dims_of(g);
  for (auto& v : gw) v = T{0};
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t o = 0; o < g.out_channels; ++o)
      for (int64_t od = 0; od < s.od; ++od)
        for (int64_t oh = 0; oh < s.oh; ++oh)
          for (int64_t ow = 0; ow < s.ow; ++ow) {
            const T gv = gy[(((n * g.out_channels + o) * s.od + od) * s.oh + oh) * s.ow + ow];
            const int64_t grp = o / s.cout_g;
            for (int64_t cl = 0; cl < s.cin_g; ++cl)
              for (int64_t kd = 0; kd < s.kd; ++kd)
                for (int64_t kh = 0; kh < s.kh; ++kh)
                  for (int64_t kw = 0; kw < s.kw; ++kw) {
                    const int64_t id = od * g.stride[0] - g.pad[0] + kd;
                    const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
                    const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                    if (!inside(id, s.id) || !inside(ih, s.ih) || !inside(iw, s.iw)) continue;
                    const int64_t ci = grp * s.cin_g + cl;
                    gw[(((o * s.cin_g + cl) * s.kd + kd) * s.kh + kh) * s.kw + kw] +=
                        gv * x[(((n * g.in_channels + ci) * s.id + id) * s.ih + ih) * s.iw + iw];
                  }
          }
}

template <typename T>
void upsample_nearest(int64_t planes, Index3 in_size, Index3 factor, std::span<const T> x,
                      std::span<T> y) {
  const int64_t od = in_size[0] * factor[0], oh = in_size[1] * factor[1],
                ow = in_size[2] * factor[2];
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t d = 0; d < od; ++d)
      for (int64_t h = 0; h < oh; ++h)
        for (int64_t w = 0; w < ow; ++w)
          y[((p * od + d) * oh + h) * ow + w] =
              x[((p * in_size[0] + d / factor[0]) * in_size[1] + h / factor[1]) * in_size[2] +
                w / factor[2]];
}

template <typename T>
void sum_pool(int64_t planes, Index3 out_size, Index3 factor, std::span<const T> x,
              std::span<T> y) {
  const int64_t id = out_size[0] * factor[0], ih = out_size[1] * factor[1],
                iw = out_size[2] * factor[2];
  for (auto& v : y) v = T{0};
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t d = 0; d < id; ++d)
      for (int64_t h = 0; h < ih; ++h)
        for (int64_t w = 0; w < iw; ++w)
          y[((p * out_size[0] + d / factor[0]) * out_size[1] + h / factor[1]) * out_size[2] +
            w / factor[2]] += x[((p * id + d) * ih + h) * iw + w];
}

template <typename T>
void matmul(int64_t m, int64_t k, int64_t n, std::span<const T> a, std::span<const T> b,
            std::span<T> c) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T acc{0};
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
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

}  // namespace volgen::reference
