#include "foe/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace foe {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    FOE_CHECK(e > 0, "shape extent must be positive, got ", e);
    n *= e;
  }
  return n;
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = int(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_of(t.shape_);
  t.dtype_ = dtype;
  if (dtype == DType::F64)
    t.rdata_.assign(size_t(t.numel_), 0.0);
  else
    t.cdata_.assign(size_t(t.numel_), cdouble(0.0, 0.0));
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape), DType::F64);
  std::fill(t.rdata_.begin(), t.rdata_.end(), value);
  return t;
}

Tensor Tensor::full_c(Shape shape, cdouble value) {
  Tensor t = zeros(std::move(shape), DType::C128);
  std::fill(t.cdata_.begin(), t.cdata_.end(), value);
  return t;
}

Tensor Tensor::from_real(Shape shape, std::vector<double> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_of(t.shape_);
  FOE_CHECK(int64_t(data.size()) == t.numel_, "data length ", data.size(),
            " does not match shape ", shape_str(t.shape_));
  t.dtype_ = DType::F64;
  t.rdata_ = std::move(data);
  return t;
}

Tensor Tensor::from_complex(Shape shape, std::vector<cdouble> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_of(t.shape_);
  FOE_CHECK(int64_t(data.size()) == t.numel_, "data length ", data.size(),
            " does not match shape ", shape_str(t.shape_));
  t.dtype_ = DType::C128;
  t.cdata_ = std::move(data);
  return t;
}

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  FOE_CHECK(i >= 0 && i < r, "axis ", i, " out of range for rank ", r);
  return shape_[size_t(i)];
}

double* Tensor::rdata() {
  FOE_CHECK(dtype_ == DType::F64, "expected real tensor");
  return rdata_.data();
}
const double* Tensor::rdata() const {
  FOE_CHECK(dtype_ == DType::F64, "expected real tensor");
  return rdata_.data();
}
cdouble* Tensor::cdata() {
  FOE_CHECK(dtype_ == DType::C128, "expected complex tensor");
  return cdata_.data();
}
const cdouble* Tensor::cdata() const {
  FOE_CHECK(dtype_ == DType::C128, "expected complex tensor");
  return cdata_.data();
}

double Tensor::item() const {
  FOE_CHECK(numel_ == 1, "item() on tensor with ", numel_, " elements");
  return rdata()[0];
}

cdouble Tensor::citem() const {
  FOE_CHECK(numel_ == 1, "citem() on tensor with ", numel_, " elements");
  return cdata()[0];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  FOE_CHECK(numel_of(new_shape) == numel_, "reshape ", shape_str(shape_),
            " -> ", shape_str(new_shape), " changes element count");
  Tensor t = *this;
  t.shape_ = std::move(new_shape);
  return t;
}

Tensor Tensor::to_complex() const {
  if (is_complex()) return *this;
  Tensor t = zeros(shape_, DType::C128);
  for (int64_t i = 0; i < numel_; ++i) t.cdata_[size_t(i)] = rdata_[size_t(i)];
  return t;
}

Tensor Tensor::real_part() const {
  FOE_CHECK(is_complex(), "real_part() expects a complex tensor");
  Tensor t = zeros(shape_, DType::F64);
  for (int64_t i = 0; i < numel_; ++i)
    t.rdata_[size_t(i)] = cdata_[size_t(i)].real();
  return t;
}

Tensor Tensor::conj() const {
  FOE_CHECK(is_complex(), "conj() expects a complex tensor");
  Tensor t = *this;
  for (auto& z : t.cdata_) z = std::conj(z);
  return t;
}

double Tensor::sum() const {
  const double* p = rdata();
  double s = 0.0;
  for (int64_t i = 0; i < numel_; ++i) s += p[size_t(i)];
  return s;
}

double Tensor::min() const {
  const double* p = rdata();
  double m = p[0];
  for (int64_t i = 1; i < numel_; ++i) m = std::min(m, p[size_t(i)]);
  return m;
}

double Tensor::max() const {
  const double* p = rdata();
  double m = p[0];
  for (int64_t i = 1; i < numel_; ++i) m = std::max(m, p[size_t(i)]);
  return m;
}

double Tensor::abs_max() const {
  if (is_complex()) {
    double m = 0.0;
    for (const auto& z : cdata_) m = std::max(m, std::abs(z));
    return m;
  }
  double m = 0.0;
  for (double v : rdata_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  if (is_complex()) {
    for (const auto& z : cdata_)
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
  }
  for (double v : rdata_)
    if (!std::isfinite(v)) return false;
  return true;
}

int64_t Tensor::flat_index(const std::vector<int64_t>& idx) const {
  FOE_CHECK(idx.size() == shape_.size(), "index rank ", idx.size(),
            " does not match tensor rank ", shape_.size());
  int64_t off = 0;
  int64_t stride = 1;
  for (int i = int(shape_.size()) - 1; i >= 0; --i) {
    const int64_t k = idx[size_t(i)];
    FOE_CHECK(k >= 0 && k < shape_[size_t(i)], "index ", k,
              " out of range for axis ", i, " with extent ", shape_[size_t(i)]);
    off += k * stride;
    stride *= shape_[size_t(i)];
  }
  return off;
}

}  // namespace foe
