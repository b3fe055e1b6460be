#include "volgen/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace volgen {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace volgen

namespace volgen::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

namespace {
// Nodes whose gradient the running grad() call actually needs; null outside grad().
thread_local const std::unordered_set<const void*>* g_needed = nullptr;

template <typename T>
bool wants(const Var<T>& v) {
  return v.requires_grad() && (!g_needed || g_needed->count(v.node()));
}
}  // namespace

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

ConvParams ConvParams::same(const Shape& weight_shape, int64_t groups) {
  ConvParams p;
  p.groups = groups;
  for (int a = 0; a < 3; ++a) p.pad[a] = weight_shape.at(2 + a) / 2;
  return p;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const int64_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<std::vector<Var<T>>(const Var<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

// Left-pads `s` with ones up to rank r.
Shape padded(const Shape& s, size_t r) {
  Shape out(r - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Strides of `src` (already padded to the rank of `dst`) with zero stride on
// broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& src, const Shape& dst) {
  std::vector<int64_t> st(dst.size(), 0);
  int64_t acc = 1;
  for (size_t i = dst.size(); i-- > 0;) {
    st[i] = src[i] == 1 && dst[i] != 1 ? 0 : acc;
    acc *= src[i];
  }
  return st;
}

// Calls f(dst_offset, src_offset, n, src_step) for each contiguous run of `dst`,
// where src is broadcast into dst. Adjacent axes with compatible strides are
// merged so runs are as long as possible.
template <typename F>
void for_each_broadcast_run(const Shape& src_in, const Shape& dst_in, F&& f) {
  const Shape src = padded(src_in, dst_in.size());
  for (size_t i = 0; i < dst_in.size(); ++i)
    if (src[i] != dst_in[i] && src[i] != 1)
      throw std::invalid_argument("cannot broadcast " + shape_str(src_in) + " to " +
                                  shape_str(dst_in));
  const int64_t total = shape_numel(dst_in);
  if (total == 0) return;
  const auto st_in = broadcast_strides(src, dst_in);
  std::vector<int64_t> dst, st;
  for (size_t i = 0; i < dst_in.size(); ++i) {
    if (dst_in[i] == 1) continue;
    if (!dst.empty() && st.back() == st_in[i] * dst_in[i]) {
      dst.back() *= dst_in[i];
      st.back() = st_in[i];
    } else {
      dst.push_back(dst_in[i]);
      st.push_back(st_in[i]);
    }
  }
  if (dst.empty()) {
    f(0, 0, 1, 1);
    return;
  }
  const size_t r = dst.size();
  std::vector<int64_t> idx(r, 0);
  const int64_t inner = dst[r - 1];
  const int64_t inner_st = st[r - 1];
  int64_t src_off = 0;
  for (int64_t base = 0; base < total; base += inner) {
    f(base, src_off, inner, inner_st);
    for (size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      src_off += st[ax];
      if (idx[ax] < dst[ax]) break;
      src_off -= st[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

// Calls f(dst_index, src_index) for every element of `dst`.
template <typename F>
void for_each_broadcast(const Shape& src, const Shape& dst, F&& f) {
  for_each_broadcast_run(src, dst, [&](int64_t base, int64_t off, int64_t n, int64_t step) {
    if (step == 0) {
      for (int64_t j = 0; j < n; ++j) f(base + j, off);
    } else if (step == 1) {
      for (int64_t j = 0; j < n; ++j) f(base + j, off + j);
    } else {
      for (int64_t j = 0; j < n; ++j) f(base + j, off + j * step);
    }
  });
}

template <typename T>
Tensor<T> broadcast_tensor(const Tensor<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  auto out = Tensor<T>::uninitialized(shape);
  const T* src = a.data();
  T* dst = out.data();
  for_each_broadcast(a.shape(), shape, [&](int64_t d, int64_t s) { dst[d] = src[s]; });
  return out;
}

template <typename T>
Tensor<T> sum_to_tensor(const Tensor<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  Tensor<T> out(shape);
  const T* src = a.data();
  T* dst = out.data();
  for_each_broadcast_run(shape, a.shape(), [&](int64_t base, int64_t off, int64_t n, int64_t step) {
    if (step == 0) {
      T acc{0};
      for (int64_t j = 0; j < n; ++j) acc += src[base + j];
      dst[off] += acc;
    } else {
      for (int64_t j = 0; j < n; ++j) dst[off + j * step] += src[base + j];
    }
  });
  return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F&& f) {
  auto out = Tensor<T>::uninitialized(a.shape());
  const T* s = a.data();
  T* d = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = f(s[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  const T* x = a.data();
  const T* y = b.data();
  if (a.shape() == b.shape()) {
    auto out = Tensor<T>::uninitialized(a.shape());
    T* d = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] = f(x[i], y[i]);
    return out;
  }
  const Shape shape = broadcast_shape(a.shape(), b.shape());
  auto out = Tensor<T>::uninitialized(shape);
  T* d = out.data();
  if (a.shape() == shape) {
    for_each_broadcast(b.shape(), shape, [&](int64_t i, int64_t j) { d[i] = f(x[i], y[j]); });
  } else if (b.shape() == shape) {
    for_each_broadcast(a.shape(), shape, [&](int64_t i, int64_t j) { d[i] = f(x[j], y[i]); });
  } else {
    const Tensor<T> ab = broadcast_tensor(a, shape);
    const Tensor<T> bb = broadcast_tensor(b, shape);
    const T* xa = ab.data();
    const T* yb = bb.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] = f(xa[i], yb[i]);
  }
  return out;
}

template <typename T>
Var<T> reduce_grad(const Var<T>& g, const Shape& shape) {
  return g.shape() == shape ? g : sum_to(g, shape);
}

Conv3dGeometry geometry(const Shape& x, const Shape& w, const ConvParams& p) {
  if (x.size() != 5 || w.size() != 5)
    throw std::invalid_argument("conv3d expects rank-5 input and weight, got " + shape_str(x) +
                                " and " + shape_str(w));
  Conv3dGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.out_channels = w[0];
  g.groups = p.groups;
  g.in_size = {x[2], x[3], x[4]};
  g.kernel = {w[2], w[3], w[4]};
  g.stride = p.stride;
  g.pad = p.pad;
  g.validate();
  if (w[1] * p.groups != x[1])
    throw std::invalid_argument("conv3d: weight " + shape_str(w) + " does not match input " +
                                shape_str(x) + " with groups " + std::to_string(p.groups));
  return g;
}

Shape out_shape(const Conv3dGeometry& g) {
  const auto o = g.out_size();
  return {g.batch, g.out_channels, o[0], o[1], o[2]};
}

}  // namespace

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         bool create_graph) {
  if (output.numel() != 1) throw std::invalid_argument("grad: output must hold one element");
  std::vector<Var<T>> result(wrt.size());
  GradModeGuard guard(create_graph);

  // Topological order (post-order DFS, iterative).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::unordered_map<Node<T>*, Var<T>> holder;
  if (output.requires_grad()) {
    std::vector<std::pair<Var<T>, size_t>> stack;
    stack.emplace_back(output, 0);
    seen.insert(output.node());
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      Node<T>* n = v.node();
      if (next < n->inputs.size()) {
        const Var<T> child = n->inputs[next++];
        if (child.requires_grad() && !seen.count(child.node())) {
          seen.insert(child.node());
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(n);
        holder.emplace(n, v);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<Node<T>*, Var<T>> grads;
  if (output.requires_grad())
    grads[output.node()] = Var<T>::constant(Tensor<T>(output.shape(), T{1}));

  std::unordered_map<Node<T>*, size_t> wanted;
  for (size_t i = 0; i < wrt.size(); ++i) wanted.emplace(wrt[i].node(), i);

  // Only nodes with a path to some wrt entry need gradients.
  std::unordered_set<const void*> needed;
  for (Node<T>* n : order) {
    bool need = wanted.count(n) > 0;
    for (const auto& in : n->inputs) need = need || needed.count(in.node());
    if (need) needed.insert(n);
  }
  struct Scope {
    const std::unordered_set<const void*>* saved = g_needed;
    ~Scope() { g_needed = saved; }
  } scope;
  g_needed = &needed;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    auto git = grads.find(n);
    if (git == grads.end()) continue;
    const Var<T> g = git->second;
    if (!n->backward) continue;
    auto in_grads = n->backward(g);
    for (size_t i = 0; i < n->inputs.size(); ++i) {
      const auto& in = n->inputs[i];
      if (!needed.count(in.node()) || !in_grads[i].defined()) continue;
      auto& slot = grads[in.node()];
      slot = slot.defined() ? add(slot, in_grads[i]) : in_grads[i];
    }
    // Free intermediate gradients that are no longer needed.
    if (!wanted.count(n)) grads.erase(git);
  }

  for (size_t i = 0; i < wrt.size(); ++i) {
    auto git = grads.find(wrt[i].node());
    if (git != grads.end()) {
      result[i] = git->second;
    } else {
      result[i] = Var<T>::constant(Tensor<T>(wrt[i].shape()));
    }
  }
  return result;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(zip(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                    [a, b](const Var<T>& g) -> std::vector<Var<T>> {
                      return {reduce_grad(g, a.shape()), reduce_grad(g, b.shape())};
                    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(zip(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                    [a, b](const Var<T>& g) -> std::vector<Var<T>> {
                      return {reduce_grad(g, a.shape()), reduce_grad(scale(g, T{-1}), b.shape())};
                    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(zip(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                    [a, b](const Var<T>& g) -> std::vector<Var<T>> {
                      return {wants(a) ? reduce_grad(mul(g, b), a.shape()) : Var<T>{},
                              wants(b) ? reduce_grad(mul(g, a), b.shape()) : Var<T>{}};
                    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return make_op<T>(map(a.value(), [c](T x) { return c * x; }), {a},
                    [c](const Var<T>& g) -> std::vector<Var<T>> { return {scale(g, c)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return make_op<T>(map(a.value(), [c](T x) { return x + c; }), {a},
                    [](const Var<T>& g) -> std::vector<Var<T>> { return {g}; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return make_op<T>(map(a.value(), [](T x) { return x * x; }), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      return {mul(g, scale(a, T{2}))};
                    });
}

template <typename T>
Var<T> rsqrt(const Var<T>& a) {
  return make_op<T>(map(a.value(), [](T x) { return T{1} / std::sqrt(x); }), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      const Var<T> r = rsqrt(a);
                      return {mul(g, scale(mul(r, square(r)), T{-0.5}))};
                    });
}

template <typename T>
Var<T> safe_rsqrt(const Var<T>& a) {
  return make_op<T>(map(a.value(), [](T x) { return x > T{0} ? T{1} / std::sqrt(x) : T{0}; }),
                    {a}, [a](const Var<T>& g) -> std::vector<Var<T>> {
                      const Var<T> r = safe_rsqrt(a);
                      return {mul(g, scale(mul(r, square(r)), T{-0.5}))};
                    });
}

template <typename T>
Var<T> safe_sqrt(const Var<T>& a) {
  return make_op<T>(map(a.value(), [](T x) { return x > T{0} ? std::sqrt(x) : T{0}; }), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      return {mul(g, scale(safe_rsqrt(a), T{0.5}))};
                    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return make_op<T>(map(a.value(), [slope](T x) { return x > T{0} ? x : slope * x; }), {a},
                    [a, slope](const Var<T>& g) -> std::vector<Var<T>> {
                      auto mask = Var<T>::constant(
                          map(a.value(), [slope](T x) { return x > T{0} ? T{1} : slope; }));
                      return {mul(g, mask)};
                    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  auto f = [](T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
  };
  return make_op<T>(map(a.value(), f), {a}, [a](const Var<T>& g) -> std::vector<Var<T>> {
    return {mul(g, mul(sigmoid(a), sigmoid(scale(a, T{-1}))))};
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  auto f = [](T x) { return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x))); };
  return make_op<T>(map(a.value(), f), {a}, [a](const Var<T>& g) -> std::vector<Var<T>> {
    return {mul(g, sigmoid(a))};
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (const T v : a.value().vec()) acc += v;
  return make_op<T>(Tensor<T>(Shape{}, std::vector<T>{acc}), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      return {broadcast_to(g, a.shape())};
                    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> sum_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_op<T>(sum_to_tensor(a.value(), shape), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      return {broadcast_to(g, a.shape())};
                    });
}

template <typename T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_op<T>(broadcast_tensor(a.value(), shape), {a},
                    [a](const Var<T>& g) -> std::vector<Var<T>> {
                      return {sum_to(g, a.shape())};
                    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_op<T>(a.value().reshaped(shape), {a}, [a](const Var<T>& g) -> std::vector<Var<T>> {
    return {reshape(g, a.shape())};
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose expects a matrix");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  auto out = Tensor<T>::uninitialized({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return make_op<T>(std::move(out), {a},
                    [](const Var<T>& g) -> std::vector<Var<T>> { return {transpose(g)}; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul shape mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = Tensor<T>::uninitialized({m, n});
  kernels::matmul<T>(m, k, n, a.value().span(), b.value().span(), out.span());
  return make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) -> std::vector<Var<T>> {
    return {wants(a) ? matmul(g, transpose(b)) : Var<T>{},
            wants(b) ? matmul(transpose(a), g) : Var<T>{}};
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Shape shape = parts[0].shape();
  if (shape.size() < 2) throw std::invalid_argument("concat_channels: rank must be >= 2");
  int64_t total_c = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw std::invalid_argument("concat_channels: rank mismatch");
    total_c += s[1];
    s[1] = shape[1];
    if (s != shape) throw std::invalid_argument("concat_channels: non-channel extents differ");
  }
  const int64_t batch = shape[0];
  const int64_t inner = shape_numel(shape) / (shape[0] * shape[1]);
  shape[1] = total_c;
  auto out = Tensor<T>::uninitialized(shape);
  int64_t c0 = 0;
  for (const auto& p : parts) {
    const int64_t c = p.shape()[1];
    for (int64_t n = 0; n < batch; ++n)
      std::copy_n(p.value().data() + n * c * inner, c * inner,
                  out.data() + (n * total_c + c0) * inner);
    c0 += c;
  }
  return make_op<T>(std::move(out), parts, [parts](const Var<T>& g) -> std::vector<Var<T>> {
    std::vector<Var<T>> gs;
    int64_t begin = 0;
    for (const auto& p : parts) {
      gs.push_back(wants(p) ? slice_channels(g, begin, p.shape()[1]) : Var<T>{});
      begin += p.shape()[1];
    }
    return gs;
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int64_t begin, int64_t count) {
  const Shape& in = a.shape();
  if (in.size() < 2 || begin < 0 || count < 1 || begin + count > in[1])
    throw std::invalid_argument("slice_channels: range out of bounds for " + shape_str(in));
  Shape shape = in;
  shape[1] = count;
  const int64_t inner = shape_numel(in) / (in[0] * in[1]);
  auto out = Tensor<T>::uninitialized(shape);
  for (int64_t n = 0; n < in[0]; ++n)
    std::copy_n(a.value().data() + (n * in[1] + begin) * inner, count * inner,
                out.data() + n * count * inner);
  return make_op<T>(std::move(out), {a},
                    [a, begin, count](const Var<T>& g) -> std::vector<Var<T>> {
                      const Shape& full = a.shape();
                      std::vector<Var<T>> pieces;
                      if (begin > 0) {
                        Shape s = full;
                        s[1] = begin;
                        pieces.push_back(Var<T>::constant(Tensor<T>(s)));
                      }
                      pieces.push_back(g);
                      if (begin + count < full[1]) {
                        Shape s = full;
                        s[1] = full[1] - begin - count;
                        pieces.push_back(Var<T>::constant(Tensor<T>(s)));
                      }
                      return {pieces.size() == 1 ? g : concat_channels(pieces)};
                    });
}

template <typename T>
Var<T> permute_channels(const Var<T>& a, const std::vector<int64_t>& perm) {
  const Shape& shape = a.shape();
  if (shape.size() < 2 || static_cast<int64_t>(perm.size()) != shape[1])
    throw std::invalid_argument("permute_channels: permutation size does not match channels");
  const int64_t c = shape[1];
  std::vector<int64_t> inverse(perm.size(), -1);
  for (int64_t j = 0; j < c; ++j) {
    if (perm[j] < 0 || perm[j] >= c || inverse[perm[j]] != -1)
      throw std::invalid_argument("permute_channels: not a permutation");
    inverse[perm[j]] = j;
  }
  const int64_t inner = shape_numel(shape) / (shape[0] * c);
  auto out = Tensor<T>::uninitialized(shape);
  for (int64_t n = 0; n < shape[0]; ++n)
    for (int64_t j = 0; j < c; ++j)
      std::copy_n(a.value().data() + (n * c + perm[j]) * inner, inner,
                  out.data() + (n * c + j) * inner);
  return make_op<T>(std::move(out), {a}, [inverse](const Var<T>& g) -> std::vector<Var<T>> {
    return {permute_channels(g, inverse)};
  });
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const ConvParams& p) {
  const auto g = geometry(x.shape(), w.shape(), p);
  auto out = Tensor<T>::uninitialized(out_shape(g));
  kernels::conv3d_forward<T>(g, x.value().span(), w.value().span(), out.span());
  return make_op<T>(std::move(out), {x, w}, [x, w, p](const Var<T>& gy) -> std::vector<Var<T>> {
    return {wants(x) ? conv3d_input_grad(gy, w, p, x.shape()) : Var<T>{},
            wants(w) ? conv3d_weight_grad(x, gy, p, w.shape()) : Var<T>{}};
  });
}

template <typename T>
Var<T> conv3d_input_grad(const Var<T>& gy, const Var<T>& w, const ConvParams& p,
                         const Shape& input_shape) {
  const auto g = geometry(input_shape, w.shape(), p);
  if (gy.shape() != out_shape(g))
    throw std::invalid_argument("conv3d_input_grad: gradient shape mismatch");
  auto out = Tensor<T>::uninitialized(input_shape);
  kernels::conv3d_backward_input<T>(g, gy.value().span(), w.value().span(), out.span());
  return make_op<T>(std::move(out), {gy, w}, [gy, w, p](const Var<T>& h) -> std::vector<Var<T>> {
    return {wants(gy) ? conv3d(h, w, p) : Var<T>{},
            wants(w) ? conv3d_weight_grad(h, gy, p, w.shape()) : Var<T>{}};
  });
}

template <typename T>
Var<T> conv3d_weight_grad(const Var<T>& x, const Var<T>& gy, const ConvParams& p,
                          const Shape& weight_shape) {
  const auto g = geometry(x.shape(), weight_shape, p);
  if (gy.shape() != out_shape(g))
    throw std::invalid_argument("conv3d_weight_grad: gradient shape mismatch");
  auto out = Tensor<T>::uninitialized(weight_shape);
  kernels::conv3d_backward_weight<T>(g, x.value().span(), gy.value().span(), out.span());
  return make_op<T>(std::move(out), {x, gy}, [x, gy, p](const Var<T>& hw) -> std::vector<Var<T>> {
    return {wants(x) ? conv3d_input_grad(gy, hw, p, x.shape()) : Var<T>{},
            wants(gy) ? conv3d(x, hw, p) : Var<T>{}};
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, Index3 factor) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw std::invalid_argument("upsample_nearest expects NCDHW");
  auto out = Tensor<T>::uninitialized({s[0], s[1], s[2] * factor[0], s[3] * factor[1], s[4] * factor[2]});
  kernels::upsample_nearest<T>(s[0] * s[1], {s[2], s[3], s[4]}, factor, x.value().span(),
                               out.span());
  return make_op<T>(std::move(out), {x}, [factor](const Var<T>& g) -> std::vector<Var<T>> {
    return {sum_pool(g, factor)};
  });
}

template <typename T>
Var<T> sum_pool(const Var<T>& x, Index3 factor) {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[2] % factor[0] || s[3] % factor[1] || s[4] % factor[2])
    throw std::invalid_argument("sum_pool: extents " + shape_str(s) + " not divisible by factor");
  const Index3 out_size{s[2] / factor[0], s[3] / factor[1], s[4] / factor[2]};
  auto out = Tensor<T>::uninitialized({s[0], s[1], out_size[0], out_size[1], out_size[2]});
  kernels::sum_pool<T>(s[0] * s[1], out_size, factor, x.value().span(), out.span());
  return make_op<T>(std::move(out), {x}, [factor](const Var<T>& g) -> std::vector<Var<T>> {
    return {upsample_nearest(g, factor)};
  });
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, Index3 factor) {
  return scale(sum_pool(x, factor), T{1} / static_cast<T>(factor[0] * factor[1] * factor[2]));
}

#define VOLGEN_AG_INSTANTIATE(T)                                                            \
  template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool);    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                               \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                          \
  template Var<T> square<T>(const Var<T>&);                                                 \
  template Var<T> rsqrt<T>(const Var<T>&);                                                  \
  template Var<T> safe_sqrt<T>(const Var<T>&);                                              \
  template Var<T> safe_rsqrt<T>(const Var<T>&);                                             \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                          \
  template Var<T> softplus<T>(const Var<T>&);                                               \
  template Var<T> sigmoid<T>(const Var<T>&);                                                \
  template Var<T> sum<T>(const Var<T>&);                                                    \
  template Var<T> mean<T>(const Var<T>&);                                                   \
  template Var<T> sum_to<T>(const Var<T>&, const Shape&);                                   \
  template Var<T> broadcast_to<T>(const Var<T>&, const Shape&);                             \
  template Var<T> reshape<T>(const Var<T>&, const Shape&);                                  \
  template Var<T> transpose<T>(const Var<T>&);                                              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                           \
  template Var<T> slice_channels<T>(const Var<T>&, int64_t, int64_t);                       \
  template Var<T> permute_channels<T>(const Var<T>&, const std::vector<int64_t>&);          \
  template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const ConvParams&);               \
  template Var<T> conv3d_input_grad<T>(const Var<T>&, const Var<T>&, const ConvParams&,     \
                                       const Shape&);                                       \
  template Var<T> conv3d_weight_grad<T>(const Var<T>&, const Var<T>&, const ConvParams&,    \
                                        const Shape&);                                      \
  template Var<T> upsample_nearest<T>(const Var<T>&, Index3);                               \
  template Var<T> sum_pool<T>(const Var<T>&, Index3);                                       \
  template Var<T> avg_pool<T>(const Var<T>&, Index3);

VOLGEN_AG_INSTANTIATE(float)
VOLGEN_AG_INSTANTIATE(double)
#undef VOLGEN_AG_INSTANTIATE

}  // namespace volgen::ag
