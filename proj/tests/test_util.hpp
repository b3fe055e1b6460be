#pragma once

// Shared helpers for the test suites: random tensors, a direct-loop
// convolution oracle and a central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "volgen/autograd.hpp"
#include "volgen/kernels.hpp"
#include "volgen/rng.hpp"
#include "volgen/tensor.hpp"

namespace testutil {

using volgen::Index3;
using volgen::Shape;
using volgen::Tensor;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, volgen::Rng& rng, double scale = 1.0) {
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(scale * rng.normal());
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

/// Grouped cross-correlation written directly from its definition.
/// x: (N, Cin, D, H, W), w: (Cout, Cin/groups, kd, kh, kw).
template <typename T>
Tensor<T> naive_conv3d(const Tensor<T>& x, const Tensor<T>& w, Index3 stride, Index3 pad,
                       int64_t groups = 1) {
  const int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0), cig = w.dim(1);
  const int64_t cog = cout / groups;
  const Index3 in{x.dim(2), x.dim(3), x.dim(4)};
  const Index3 k{w.dim(2), w.dim(3), w.dim(4)};
  Index3 out;
  for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
  Tensor<T> y({n, cout, out[0], out[1], out[2]});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t od = 0; od < out[0]; ++od)
        for (int64_t oh = 0; oh < out[1]; ++oh)
          for (int64_t ow = 0; ow < out[2]; ++ow) {
            double acc = 0;
            const int64_t g = o / cog;
            for (int64_t i = 0; i < cig; ++i)
              for (int64_t a = 0; a < k[0]; ++a)
                for (int64_t bb = 0; bb < k[1]; ++bb)
                  for (int64_t c = 0; c < k[2]; ++c) {
                    const int64_t d = od * stride[0] - pad[0] + a;
                    const int64_t h = oh * stride[1] - pad[1] + bb;
                    const int64_t ww = ow * stride[2] - pad[2] + c;
                    if (d < 0 || h < 0 || ww < 0 || d >= in[0] || h >= in[1] || ww >= in[2])
                      continue;
                    acc += static_cast<double>(x.at(b, g * cig + i, d, h, ww)) *
                           static_cast<double>(w.at(o, i, a, bb, c));
                  }
            (void)cin;
            y.at(b, o, od, oh, ow) = static_cast<T>(acc);
          }
  return y;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
  double diff = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Largest relative error between autodiff and central differences over all
/// inputs. `f` rebuilds the scalar output from the current leaf values.
inline double gradcheck(const std::function<volgen::ag::Var<double>()>& f,
                        std::vector<volgen::ag::Var<double>>& inputs, double h = 1e-6) {
  const auto analytic = volgen::ag::grad(f(), inputs);
  double worst = 0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    auto& v = inputs[p].mutable_value();
    std::vector<double> ad(analytic[p].value().vec().begin(), analytic[p].value().vec().end());
    std::vector<double> fd(ad.size());
    for (int64_t i = 0; i < v.numel(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = f().item();
      v[i] = orig - h;
      const double down = f().item();
      v[i] = orig;
      fd[static_cast<size_t>(i)] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(ad, fd));
  }
  return worst;
}

}  // namespace testutil
