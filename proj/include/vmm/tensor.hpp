#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace vmm {

/// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 (vector) and
/// 2 (matrix) cover everything the models need.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor vector(std::vector<double> data);
  static Tensor identity(std::size_t n);

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  /// Scalar extraction; throws unless numel() == 1.
  double value() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  void fill(double v);

  std::string shape_str() const;
  static std::string shape_str(const std::vector<std::size_t>& shape);

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

} // namespace vmm
