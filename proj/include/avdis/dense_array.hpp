#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace avdis {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Row-major array of doubles with rank 0..3. Rank 0 is a scalar.
class DenseArray {
 public:
  static constexpr std::size_t kMaxRank = 3;

  DenseArray() : data_(1, 0.0) {}
  explicit DenseArray(Shape shape, double fill = 0.0);
  DenseArray(Shape shape, std::vector<double> data);

  static DenseArray scalar(double value) { return DenseArray({}, {value}); }
  static DenseArray vector(std::initializer_list<double> values);
  static DenseArray matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Same data, new shape with equal element count.
  DenseArray reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);

}  // namespace avdis
