#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/numerics/half.hpp"

namespace lsf {

enum class DType : std::uint8_t { B32 = 0, B16 = 1, B64 = 2 };

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::B32;
  else if constexpr (std::is_same_v<T, Half>) return DType::B16;
  else {
    static_assert(std::is_same_v<T, double>, "unsupported element type");
    return DType::B64;
  }
}

inline std::size_t dtype_width(DType d) {
  switch (d) {
    case DType::B32: return 4;
    case DType::B16: return 2;
    case DType::B64: return 8;
  }
  return 0;
}

inline constexpr std::size_t kMaxRank = 4;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) { assign(dims.begin(), dims.end()); }
  explicit Shape(std::span<const std::size_t> dims) { assign(dims.begin(), dims.end()); }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t back() const { return dims_[rank_ - 1]; }
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  // Product of all but the last dimension.
  std::size_t rows() const { return rank_ == 0 ? 0 : numel() / back(); }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

 private:
  template <class It>
  void assign(It first, It last) {
    rank_ = 0;
    for (; first != last; ++first) {
      LSF_CHECK(rank_ < kMaxRank, ErrorCode::InvalidArgument, "tensor rank exceeds 4");
      LSF_CHECK(*first >= 1, ErrorCode::InvalidArgument, "tensor dims must be >= 1");
      dims_[rank_++] = *first;
    }
    LSF_CHECK(rank_ >= 1, ErrorCode::InvalidArgument, "tensor rank must be >= 1");
  }

  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Non-owning row-major view. Kernels read and write through views so the
// storage can live in an owning Tensor, a workspace region or an arena block.
template <class T>
class TensorView {
 public:
  TensorView() = default;
  TensorView(T* data, Shape shape) : data_(data), shape_(shape) {}

  // Views of mutable data convert to views of const data.
  template <class U>
    requires(std::is_same_v<const U, T> && !std::is_same_v<U, T>)
  TensorView(const TensorView<U>& other) : data_(other.data()), shape_(other.shape()) {}

  T* data() const { return data_; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t cols() const { return shape_.back(); }
  std::span<T> span() const { return {data_, numel()}; }
  T& operator[](std::size_t i) const { return data_[i]; }
  T* row(std::size_t r) const { return data_ + r * cols(); }

  TensorView reshaped(Shape s) const {
    LSF_CHECK(s.numel() == numel(), ErrorCode::ShapeMismatch,
              "reshape " + shape_.str() + " -> " + s.str());
    return {data_, s};
  }

 private:
  T* data_ = nullptr;
  Shape shape_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    LSF_CHECK(data_.size() == shape_.numel(), ErrorCode::ShapeMismatch,
              "data length " + std::to_string(data_.size()) + " != numel of " + shape_.str());
  }

  static constexpr DType dtype() { return dtype_of<T>(); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t cols() const { return shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  TensorView<T> view() { return {data_.data(), shape_}; }
  TensorView<const T> view() const { return {data_.data(), shape_}; }
  operator TensorView<T>() { return view(); }
  operator TensorView<const T>() const { return view(); }

  void reshape(Shape s) {
    LSF_CHECK(s.numel() == numel(), ErrorCode::ShapeMismatch,
              "reshape " + shape_.str() + " -> " + s.str());
    shape_ = s;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class To, class From>
Tensor<To> tensor_cast(TensorView<const From> src) {
  Tensor<To> out(src.shape());
  for (std::size_t i = 0; i < src.numel(); ++i) out[i] = store_as<To>(load_as<double>(src[i]));
  return out;
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  return tensor_cast<To, From>(src.view());
}

}  // namespace lsf
