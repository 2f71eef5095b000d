#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tfm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape);

/// Cache-line aligned allocation. Vectorized reductions peel a prefix whose
/// length depends on the address, so fixed alignment keeps results bit-stable
/// from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major n-dimensional array with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_count(shape_)), fill) {}

  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_count(shape_)) {
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  /// Number of elements in one slice along axis 0.
  std::int64_t slice_size() const {
    if (shape_.empty()) throw std::invalid_argument("slice of a scalar tensor");
    return static_cast<std::int64_t>(data_.size()) / shape_[0];
  }

  std::span<T> slice_span(std::int64_t i) {
    check_slice(i);
    const auto n = slice_size();
    return {data_.data() + i * n, static_cast<std::size_t>(n)};
  }
  std::span<const T> slice_span(std::int64_t i) const {
    check_slice(i);
    const auto n = slice_size();
    return {data_.data() + i * n, static_cast<std::size_t>(n)};
  }

  /// Copy of slice i along axis 0, with that axis dropped.
  Tensor slice(std::int64_t i) const {
    auto span = slice_span(i);
    return Tensor(Shape(shape_.begin() + 1, shape_.end()), AlignedVector<T>(span.begin(), span.end()));
  }

  void set_slice(std::int64_t i, const Tensor& value) {
    if (Shape(shape_.begin() + 1, shape_.end()) != value.shape()) {
      throw std::invalid_argument("set_slice: shape " + shape_string(value.shape()) +
                                  " does not fit into " + shape_string(shape_));
    }
    std::copy(value.begin(), value.end(), slice_span(i).begin());
  }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::int64_t checked_count(const Shape& shape) {
    for (auto d : shape) {
      if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    }
    return element_count(shape);
  }

  void check_slice(std::int64_t i) const {
    if (shape_.empty() || i < 0 || i >= shape_[0]) {
      throw std::out_of_range("slice index " + std::to_string(i) + " outside " + shape_string(shape_));
    }
  }

  Shape shape_;
  AlignedVector<T> data_;
};

using Array = Tensor<float>;

/// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape shape{static_cast<std::int64_t>(items.size())};
  shape.insert(shape.end(), items.front().shape().begin(), items.front().shape().end());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < items.size(); ++i) out.set_slice(static_cast<std::int64_t>(i), items[i]);
  return out;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
  }
}

}  // namespace tfm
