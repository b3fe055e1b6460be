#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace volgen {

using Shape = std::vector<int64_t>;

/// Allocator whose value-less construct() leaves scalars uninitialised, so
/// buffers that are fully overwritten skip the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

inline int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& s);

/// Dense row-major tensor. Rank is arbitrary; the network code uses
/// rank 5 (N, C, D, H, W) for feature volumes and rank 2 for vectors.
template <typename T>
class Tensor {
 public:
  using Storage = std::vector<T, DefaultInitAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {
    for (auto d : shape_) {
      if (d < 0) throw std::invalid_argument("negative tensor extent in " + shape_str(shape_));
    }
  }
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }

  /// Tensor whose contents are unspecified until written.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    for (auto d : shape)
      if (d < 0) throw std::invalid_argument("negative tensor extent in " + shape_str(shape));
    t.data_.resize(static_cast<size_t>(shape_numel(shape)));
    t.shape_ = std::move(shape);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t axis) const { return shape_.at(axis); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for rank-5 tensors.
  T& at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(offset5(n, c, d, h, w))];
  }
  const T& at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(offset5(n, c, d, h, w))];
  }

  Tensor reshaped(Shape s) const& {
    Tensor t = *this;
    return std::move(t).reshaped(std::move(s));
  }
  Tensor reshaped(Shape s) && {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    shape_ = std::move(s);
    return std::move(*this);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  int64_t offset5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
    return (((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w;
  }

  Shape shape_;
  Storage data_;
};

}  // namespace volgen
