#include "foe/io.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace foe {

namespace {

constexpr char kMagic[4] = {'F', 'O', 'T', '1'};

void put_u64_le(std::ostream& os, uint64_t v) {
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[size_t(i)] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

bool get_u64_le(std::istream& is, uint64_t& v) {
  std::array<unsigned char, 8> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[size_t(i)]) << (8 * i);
  return true;
}

void put_f64_le(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64_le(os, bits);
}

void put_f32_le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  std::array<unsigned char, 4> b;
  for (int i = 0; i < 4; ++i) b[size_t(i)] = (unsigned char)((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

bool get_f64_le(std::istream& is, double& v) {
  uint64_t bits;
  if (!get_u64_le(is, bits)) return false;
  std::memcpy(&v, &bits, 8);
  return true;
}

bool get_f32_le(std::istream& is, float& v) {
  std::array<unsigned char, 4> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= uint32_t(b[size_t(i)]) << (8 * i);
  std::memcpy(&v, &bits, 4);
  return true;
}

}  // namespace

void write_fot(const std::string& path, const Tensor& t) {
  write_fot(path, t, t.is_complex() ? FotDType::C128 : FotDType::F64);
}

void write_fot(const std::string& path, const Tensor& t, FotDType storage) {
  const bool want_complex =
      storage == FotDType::C64 || storage == FotDType::C128;
  FOE_CHECK(want_complex == t.is_complex(), "storage dtype does not match ",
            dtype_name(t.dtype()), " tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(IoErrorCode::OpenFailed, "cannot open " + path);

  os.write(kMagic, 4);
  const unsigned char dt = (unsigned char)(storage);
  const unsigned char rank = (unsigned char)(t.rank());
  os.write(reinterpret_cast<const char*>(&dt), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  const char reserved[6] = {0, 0, 0, 0, 0, 0};
  os.write(reserved, 6);
  for (int64_t e : t.shape()) put_u64_le(os, uint64_t(e));

  const int64_t n = t.numel();
  switch (storage) {
    case FotDType::F64:
      for (int64_t i = 0; i < n; ++i) put_f64_le(os, t.rdata()[i]);
      break;
    case FotDType::F32:
      for (int64_t i = 0; i < n; ++i) put_f32_le(os, float(t.rdata()[i]));
      break;
    case FotDType::C128:
      for (int64_t i = 0; i < n; ++i) {
        put_f64_le(os, t.cdata()[i].real());
        put_f64_le(os, t.cdata()[i].imag());
      }
      break;
    case FotDType::C64:
      for (int64_t i = 0; i < n; ++i) {
        put_f32_le(os, float(t.cdata()[i].real()));
        put_f32_le(os, float(t.cdata()[i].imag()));
      }
      break;
  }
  os.flush();
  if (!os) throw IoError(IoErrorCode::OpenFailed, "write failed for " + path);
}

Tensor read_fot(const std::string& path, FotDType* storage) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(IoErrorCode::OpenFailed, "cannot open " + path);

  char magic[4];
  if (!is.read(magic, 4))
    throw IoError(IoErrorCode::Truncated, path + ": truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(IoErrorCode::BadMagic, path + ": bad magic");

  unsigned char dt_code = 0, rank = 0;
  char reserved[6];
  if (!is.read(reinterpret_cast<char*>(&dt_code), 1) ||
      !is.read(reinterpret_cast<char*>(&rank), 1) || !is.read(reserved, 6))
    throw IoError(IoErrorCode::Truncated, path + ": truncated header");
  if (dt_code < 1 || dt_code > 4)
    throw IoError(IoErrorCode::BadDType,
                  str(path, ": unknown dtype code ", int(dt_code)));
  if (rank > 16)
    throw IoError(IoErrorCode::BadRank,
                  str(path, ": implausible rank ", int(rank)));

  Shape shape(rank);
  for (int i = 0; i < int(rank); ++i) {
    uint64_t e;
    if (!get_u64_le(is, e))
      throw IoError(IoErrorCode::Truncated, path + ": truncated extents");
    if (e == 0 || e > (uint64_t(1) << 40))
      throw IoError(IoErrorCode::BadHeader,
                    str(path, ": bad extent ", e, " for axis ", i));
    shape[size_t(i)] = int64_t(e);
  }

  const FotDType fdt = FotDType(dt_code);
  if (storage) *storage = fdt;
  const bool complex_file = fdt == FotDType::C64 || fdt == FotDType::C128;
  Tensor t = Tensor::zeros(shape, complex_file ? DType::C128 : DType::F64);
  const int64_t n = t.numel();
  switch (fdt) {
    case FotDType::F64:
      for (int64_t i = 0; i < n; ++i)
        if (!get_f64_le(is, t.rdata()[i]))
          throw IoError(IoErrorCode::Truncated, path + ": truncated payload");
      break;
    case FotDType::F32:
      for (int64_t i = 0; i < n; ++i) {
        float v;
        if (!get_f32_le(is, v))
          throw IoError(IoErrorCode::Truncated, path + ": truncated payload");
        t.rdata()[i] = double(v);
      }
      break;
    case FotDType::C128:
      for (int64_t i = 0; i < n; ++i) {
        double re, im;
        if (!get_f64_le(is, re) || !get_f64_le(is, im))
          throw IoError(IoErrorCode::Truncated, path + ": truncated payload");
        t.cdata()[i] = cdouble(re, im);
      }
      break;
    case FotDType::C64:
      for (int64_t i = 0; i < n; ++i) {
        float re, im;
        if (!get_f32_le(is, re) || !get_f32_le(is, im))
          throw IoError(IoErrorCode::Truncated, path + ": truncated payload");
        t.cdata()[i] = cdouble(double(re), double(im));
      }
      break;
  }
  return t;
}

}  // namespace foe
