#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/errors.hpp"

namespace dpa {

/// Cache-line aligned allocation. Vectorized reductions peel a number of leading
/// elements that depends on the address, so unaligned buffers make float sums
/// differ between otherwise identical runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlignment})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlignment}); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense 4-d array in NCHW order. A single image is a tensor with n() == 1.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Shape = std::array<int, 4>;

  Tensor() : shape_{0, 0, 0, 0} {}
  Tensor(int n, int c, int h, int w, Real fill = Real(0)) : shape_{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ShapeError("negative tensor dimension");
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }
  explicit Tensor(Shape s, Real fill = Real(0)) : Tensor(s[0], s[1], s[2], s[3], fill) {}

  int n() const noexcept { return shape_[0]; }
  int c() const noexcept { return shape_[1]; }
  int h() const noexcept { return shape_[2]; }
  int w() const noexcept { return shape_[3]; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  /// Elements per batch item.
  std::size_t item_size() const noexcept { return static_cast<std::size_t>(c()) * h() * w(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h()) * w(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> span() noexcept { return data_; }
  std::span<const Real> span() const noexcept { return data_; }
  AlignedVector<Real>& storage() noexcept { return data_; }
  const AlignedVector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(int b, int ch, int y, int x) noexcept { return data_[offset(b, ch, y, x)]; }
  const Real& at(int b, int ch, int y, int x) const noexcept { return data_[offset(b, ch, y, x)]; }

  std::span<Real> item(int b) noexcept { return {data_.data() + b * item_size(), item_size()}; }
  std::span<const Real> item(int b) const noexcept { return {data_.data() + b * item_size(), item_size()}; }
  std::span<Real> plane(int b, int ch) noexcept { return {data_.data() + offset(b, ch, 0, 0), plane_size()}; }
  std::span<const Real> plane(int b, int ch) const noexcept { return {data_.data() + offset(b, ch, 0, 0), plane_size()}; }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape s) const {
    Tensor t;
    t.shape_ = s;
    if (static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3] != size()) throw ShapeError("reshape changes element count");
    t.data_ = data_;
    return t;
  }

  /// Copy of batch item b as a one-item tensor.
  Tensor slice(int b) const {
    Tensor t(1, c(), h(), w());
    std::copy(item(b).begin(), item(b).end(), t.data());
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(n(), c(), h(), w());
    std::transform(data_.begin(), data_.end(), t.data(), [](Real v) { return static_cast<Other>(v); });
    return t;
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::size_t offset(int b, int ch, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(b) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  AlignedVector<Real> data_;
};

template <typename Real>
std::string shape_string(const Tensor<Real>& t) {
  std::ostringstream os;
  os << '[' << t.n() << 'x' << t.c() << 'x' << t.h() << 'x' << t.w() << ']';
  return os.str();
}

/// Concatenates one-item tensors of equal shape along the batch axis.
template <typename Real>
Tensor<Real> stack(std::span<const Tensor<Real>> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  const auto& first = items.front();
  Tensor<Real> out(static_cast<int>(items.size()) * first.n(), first.c(), first.h(), first.w());
  std::size_t pos = 0;
  for (const auto& t : items) {
    if (t.c() != first.c() || t.h() != first.h() || t.w() != first.w())
      throw ShapeError("stack: mismatched shapes " + shape_string(first) + " vs " + shape_string(t));
    std::copy(t.data(), t.data() + t.size(), out.data() + pos);
    pos += t.size();
  }
  return out;
}

template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& items) {
  return stack(std::span<const Tensor<Real>>(items));
}

/// Gathers the listed one-item tensors into a batch.
template <typename Real, typename Index>
Tensor<Real> gather(const std::vector<Tensor<Real>>& items, std::span<const Index> ids) {
  if (ids.empty()) throw ShapeError("gather of zero tensors");
  const auto& first = items.at(static_cast<std::size_t>(ids[0]));
  Tensor<Real> out(static_cast<int>(ids.size()), first.c(), first.h(), first.w());
  std::size_t pos = 0;
  for (auto id : ids) {
    const auto& t = items.at(static_cast<std::size_t>(id));
    if (!t.same_shape(first)) throw ShapeError("gather: mismatched shapes");
    std::copy(t.data(), t.data() + t.size(), out.data() + pos);
    pos += t.size();
  }
  return out;
}

}  // namespace dpa
