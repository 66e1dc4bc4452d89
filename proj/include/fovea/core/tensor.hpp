#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fovea {

/// Dense row-major n-d array over a real scalar. Shapes are dynamic and
/// small (rank <= 4 in practice); storage is a flat Eigen array so
/// elementwise work stays expression-friendly.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.setZero(numel(shape_));
  }

  Tensor(std::vector<int> shape, S fill) : shape_(std::move(shape)) {
    data_.setConstant(numel(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::initializer_list<S> values) : shape_(std::move(shape)) {
    if (static_cast<long>(values.size()) != numel(shape_))
      throw std::invalid_argument("tensor: literal size does not match shape");
    data_.resize(numel(shape_));
    long i = 0;
    for (S v : values) data_[i++] = v;
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, S v) { return Tensor(std::move(shape), v); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  long size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](long i) { return data_[i]; }
  S operator[](long i) const { return data_[i]; }

  S& at(std::initializer_list<long> idx) { return data_[flat(idx)]; }
  S at(std::initializer_list<long> idx) const { return data_[flat(idx)]; }

  /// Row-major matrix view over the first axis vs the rest.
  MatrixMap mat(long rows, long cols) {
    if (rows * cols != size()) throw std::invalid_argument("tensor: bad matrix view " + shape_str());
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap mat(long rows, long cols) const {
    if (rows * cols != size()) throw std::invalid_argument("tensor: bad matrix view " + shape_str());
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel(shape) != size())
      throw std::invalid_argument("tensor: reshape " + shape_str() + " -> incompatible size");
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (long i = 0; i < data_.size(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

  static long numel(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= d;
    }
    return n;
  }

 private:
  long flat(std::initializer_list<long> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw std::invalid_argument("tensor: index rank mismatch for " + shape_str());
    long off = 0;
    int i = 0;
    for (long v : idx) {
      off = off * shape_[static_cast<size_t>(i)] + v;
      ++i;
    }
    return off;
  }

  std::vector<int> shape_;
  Array data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace fovea
