#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace mmfgl {

// Dense row-major matrix.  Instantiated with float for training/storage and
// with double inside the finite-difference gradient checker.
template <typename T>
class Mat {
 public:
  Mat() : rows_(0), cols_(0) {}
  Mat(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  T operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  T* row(std::size_t r) { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) { data_.assign(data_.size(), v); }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t rows_, cols_;
  std::vector<T> data_;
};

// C = A * B
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols() == b.rows());
  Mat<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      const T* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// C = A^T * B
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
  assert(a.rows() == b.rows());
  Mat<T> c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const T* ak = a.row(k);
    const T* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = ak[i];
      if (aki == T{0}) continue;
      T* ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

// C = A * B^T
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols() == b.cols());
  Mat<T> c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ai = a.row(i);
    T* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* bj = b.row(j);
      T acc{0};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
  return c;
}

}  // namespace mmfgl
