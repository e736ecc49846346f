#include "corrmlp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace corrmlp {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 1) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for shape " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

double& Tensor::at(int64_t b, int64_t c, int64_t z, int64_t y, int64_t x) {
  return data_[static_cast<size_t>((((b * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x)];
}

double Tensor::at(int64_t b, int64_t c, int64_t z, int64_t y, int64_t x) const {
  return data_[static_cast<size_t>((((b * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x)];
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) {
  for (double& d : data_) d = v;
}

bool Tensor::all_finite() const {
  for (double d : data_) {
    if (!std::isfinite(d)) return false;
  }
  return true;
}

Extents spatial_extents(const Tensor& t) {
  if (t.rank() != 5) throw std::invalid_argument("expected 5-D tensor, got " + shape_str(t.shape()));
  return {t.dim(2), t.dim(3), t.dim(4)};
}

}  // namespace corrmlp
