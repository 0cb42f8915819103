#include "fcraft/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace fcraft {

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bitwise_equal(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  return std::memcmp(data_.data(), o.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor row(const Tensor& m, std::size_t r) {
  const std::size_t c = m.cols();
  Tensor out({c});
  std::memcpy(out.data(), m.data() + r * c, c * sizeof(double));
  return out;
}

void set_row(Tensor& m, std::size_t r, const Tensor& v) {
  const std::size_t c = m.cols();
  if (v.size() != c) throw std::invalid_argument("set_row: width mismatch");
  std::memcpy(m.data() + r * c, v.data(), c * sizeof(double));
}

Tensor take_rows(const Tensor& m, const std::vector<std::size_t>& idx) {
  const std::size_t c = m.cols();
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw std::out_of_range("take_rows: index");
    std::memcpy(out.data() + i * c, m.data() + idx[i] * c, c * sizeof(double));
  }
  return out;
}

double dot_flat(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot_flat: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot_flat(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace fcraft
