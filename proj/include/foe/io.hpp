#pragma once

#include <string>

#include "foe/tensor.hpp"

namespace foe {

// FOT1 container: magic "FOT1", u8 dtype code (1=f32, 2=f64, 3=c64, 4=c128),
// u8 rank, 6 reserved zero bytes, rank u64 little-endian extents, then the
// row-major little-endian payload with complex values interleaved re,im.
enum class FotDType : uint8_t { F32 = 1, F64 = 2, C64 = 3, C128 = 4 };

enum class IoErrorCode {
  OpenFailed,
  BadMagic,
  BadDType,
  BadRank,
  BadHeader,
  Truncated,
};

class IoError : public Error {
 public:
  IoError(IoErrorCode code, const std::string& msg) : Error(msg), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// Writes `t` with its natural width (f64 -> F64, c128 -> C128) unless
// `storage` narrows it to f32/c64.
void write_fot(const std::string& path, const Tensor& t);
void write_fot(const std::string& path, const Tensor& t, FotDType storage);

// Reads any FOT1 file; f32/c64 payloads are widened to f64/c128. The on-disk
// dtype is reported through `storage` when non-null.
Tensor read_fot(const std::string& path, FotDType* storage = nullptr);

}  // namespace foe
