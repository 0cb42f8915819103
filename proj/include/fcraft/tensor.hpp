#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcraft {

// Dense row-major float64 tensor with value semantics. Rank 0 is a scalar
// (one element, empty shape); rank 1 a vector; rank 2 a matrix. Nothing here
// knows about gradients; see diffcore::Graph for that.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }
  static Tensor vec(std::initializer_list<double> xs) {
    return Tensor({xs.size()}, std::vector<double>(xs));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  // Matrix accessors; only valid for rank 2.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::size_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw std::out_of_range("Tensor::dim");
    return shape_[i];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  // Exact elementwise equality, used by determinism tests.
  bool bitwise_equal(const Tensor& o) const;

  std::string shape_str() const;

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Small conveniences shared across modules; all allocate the result.
Tensor row(const Tensor& m, std::size_t r);
void set_row(Tensor& m, std::size_t r, const Tensor& v);
Tensor take_rows(const Tensor& m, const std::vector<std::size_t>& idx);
double dot_flat(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fcraft
