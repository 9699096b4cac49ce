#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "foe/common.hpp"

namespace foe {

using cdouble = std::complex<double>;

// In-memory dtypes. f32/c64 exist only as FOT1 storage codes; everything is
// widened to f64/c128 on load so gradient checks stay in double precision.
enum class DType : uint8_t { F64, C128 };

inline const char* dtype_name(DType d) {
  return d == DType::F64 ? "f64" : "c128";
}

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

// Dense row-major n-d array. Value semantics; contiguous storage only.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F64);
  static Tensor full(Shape shape, double value);
  static Tensor full_c(Shape shape, cdouble value);
  static Tensor scalar(double value) { return full({}, value); }
  static Tensor from_real(Shape shape, std::vector<double> data);
  static Tensor from_complex(Shape shape, std::vector<cdouble> data);

  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int64_t numel() const { return numel_; }
  DType dtype() const { return dtype_; }
  bool is_complex() const { return dtype_ == DType::C128; }
  bool defined() const { return numel_ > 0; }

  // Extent with python-style negative indexing.
  int64_t dim(int i) const;

  double* rdata();
  const double* rdata() const;
  cdouble* cdata();
  const cdouble* cdata() const;

  template <class... Idx>
  double& at(Idx... idx) {
    return rdata()[flat_index({int64_t(idx)...})];
  }
  template <class... Idx>
  double at(Idx... idx) const {
    return rdata()[flat_index({int64_t(idx)...})];
  }
  template <class... Idx>
  cdouble& cat(Idx... idx) {
    return cdata()[flat_index({int64_t(idx)...})];
  }
  template <class... Idx>
  cdouble cat(Idx... idx) const {
    return cdata()[flat_index({int64_t(idx)...})];
  }

  // Scalar accessors (rank-0 or single-element tensors).
  double item() const;
  cdouble citem() const;

  // Metadata-only reshape; element count must match.
  Tensor reshaped(Shape new_shape) const;

  Tensor to_complex() const;   // f64 -> c128 (imag 0); identity on c128
  Tensor real_part() const;    // c128 -> f64
  Tensor conj() const;

  double sum() const;          // real tensors
  double min() const;
  double max() const;
  double abs_max() const;
  bool all_finite() const;

  int64_t flat_index(const std::vector<int64_t>& idx) const;

 private:
  Shape shape_;
  int64_t numel_ = 0;
  DType dtype_ = DType::F64;
  std::vector<double> rdata_;
  std::vector<cdouble> cdata_;
};

}  // namespace foe
