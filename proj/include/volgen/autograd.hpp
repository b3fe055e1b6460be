#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// Every backward rule is itself written with differentiable ops, so the
// gradient graph can be differentiated again (needed for the R1 penalty,
// whose parameter gradient goes through d D(x) / d x). Pass
// create_graph = true to grad() to keep that second-order graph.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volgen/kernels.hpp"
#include "volgen/tensor.hpp"

namespace volgen::ag {

template <typename T>
class Var;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  // Maps the output gradient to one gradient per input (undefined Var = none).
  std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  /// Mutable access for optimizers and weight loading; only valid on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  /// Value of a single-element tensor.
  T item() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Gradients of a single-element `output` w.r.t. each of `wrt`. Inputs that
/// do not influence the output receive zeros.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         bool create_graph = false);

struct ConvParams {
  Index3 stride{1, 1, 1};
  Index3 pad{0, 0, 0};
  int64_t groups = 1;

  static ConvParams same(const Shape& weight_shape, int64_t groups = 1);
};

Shape broadcast_shape(const Shape& a, const Shape& b);

// Elementwise (numpy-style broadcasting for binary ops).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T c);
template <typename T> Var<T> add_scalar(const Var<T>& a, T c);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> rsqrt(const Var<T>& a);
/// sqrt(max(x, 0)); gradient defined as 0 where x <= 0.
template <typename T> Var<T> safe_sqrt(const Var<T>& a);
/// 1/sqrt(x) for x > 0, 0 elsewhere.
template <typename T> Var<T> safe_rsqrt(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);

// Reductions and shape manipulation.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sum_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> broadcast_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> reshape(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

// Channel-axis (axis 1) operations.
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& a, int64_t begin, int64_t count);
/// Output channel j is input channel perm[j].
template <typename T> Var<T> permute_channels(const Var<T>& a, const std::vector<int64_t>& perm);

// Convolution family on NCDHW tensors.
template <typename T> Var<T> conv3d(const Var<T>& x, const Var<T>& w, const ConvParams& p);
template <typename T>
Var<T> conv3d_input_grad(const Var<T>& gy, const Var<T>& w, const ConvParams& p,
                         const Shape& input_shape);
template <typename T>
Var<T> conv3d_weight_grad(const Var<T>& x, const Var<T>& gy, const ConvParams& p,
                          const Shape& weight_shape);
template <typename T> Var<T> upsample_nearest(const Var<T>& x, Index3 factor);
template <typename T> Var<T> sum_pool(const Var<T>& x, Index3 factor);
template <typename T> Var<T> avg_pool(const Var<T>& x, Index3 factor);

}  // namespace volgen::ag
