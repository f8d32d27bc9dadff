#include "avdis/dense_array.hpp"

#include <cmath>
#include <sstream>

#include "avdis/errors.hpp"

namespace avdis {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > DenseArray::kMaxRank) {
    throw DimensionError("rank " + std::to_string(shape.size()) + " exceeds 3 for shape " +
                         shape_to_string(shape));
  }
}

}  // namespace

DenseArray::DenseArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

DenseArray::DenseArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
}

DenseArray DenseArray::vector(std::initializer_list<double> values) {
  return DenseArray({values.size()}, std::vector<double>(values));
}

DenseArray DenseArray::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseArray({r, c}, std::move(data));
}

DenseArray DenseArray::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
  }
  return DenseArray(std::move(shape), data_);
}

bool DenseArray::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace avdis
