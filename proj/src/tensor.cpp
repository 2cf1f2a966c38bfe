#include "choreo/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  CHOREO_REQUIRE(values_.size() == product(shape_),
                 "tensor values length " + std::to_string(values_.size()) +
                     " does not match shape " + shape_string());
}

std::vector<double> Tensor::row_vector(std::size_t r) const {
  auto s = row_span(r);
  return {s.begin(), s.end()};
}

double Tensor::item() const {
  CHOREO_REQUIRE(values_.size() == 1, "item() on tensor of shape " + shape_string());
  return values_[0];
}

bool Tensor::all_finite() const {
  // inf * 0 and nan * 0 are nan, so one pass without branches suffices
  double acc = 0.0;
  for (double v : values_) acc += v * 0.0;
  return acc == 0.0;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ']';
  return os.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), values_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  CHOREO_REQUIRE(values_.size() == other.values_.size(), "tensor += size mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  CHOREO_REQUIRE(!parts.empty(), "concat_rows of nothing");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    CHOREO_REQUIRE(p.cols() == cols, "concat_rows width mismatch");
    rows += p.rows();
  }
  std::vector<double> values;
  values.reserve(rows * cols);
  for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
  return Tensor::matrix(rows, cols, std::move(values));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace choreo
