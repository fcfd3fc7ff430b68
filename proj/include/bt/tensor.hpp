#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bt {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. Copies share the underlying buffer; all tape
// operations allocate fresh outputs and never mutate their inputs, so
// sharing is safe. Use clone() before writing through data() on a tensor
// someone else may hold.
template <typename T>
class Tensor {
 public:
  Tensor() : shape_{}, data_(std::make_shared<std::vector<T>>(1, T(0))) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(
            static_cast<std::size_t>(check_shape(shape_)), T(0))) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<std::int64_t>(data_->size()) != check_shape(shape_))
      throw std::invalid_argument("tensor: data size does not match shape " +
                                  shape_string(shape_));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (T& x : *t.data_) x = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }

  // Dimension lookup with negative indexing from the back.
  std::int64_t dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw std::out_of_range("tensor: axis out of range");
    return shape_[static_cast<std::size_t>(i)];
  }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw std::invalid_argument("tensor: reshape " + shape_string(shape_) +
                                  " -> " + shape_string(new_shape) +
                                  " changes element count");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static std::int64_t check_shape(const Shape& s) {
    for (std::int64_t d : s)
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    return shape_numel(s);
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

}  // namespace bt
