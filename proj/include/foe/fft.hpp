#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace foe::fft {

using cdouble = std::complex<double>;

// Unnormalized forward 1-D DFT of length plan size; inverse uses the
// conjugate kernel, also unnormalized. Radix-2 for powers of two, Bluestein
// otherwise. Plans are cached; ensure_plan() must be called outside parallel
// regions before transform() is used inside them.
void ensure_plan(int64_t n);
void transform_1d(int64_t n, cdouble* data, bool inverse);

// 2-D transform over the last two axes of a [batch, h, w] buffer, with
// orthonormal scaling 1/sqrt(h*w) in both directions. Parallel over rows
// and columns when OpenMP is enabled.
void fft2_ortho(cdouble* data, int64_t batch, int64_t h, int64_t w,
                bool inverse);

int64_t next_pow2(int64_t n);

}  // namespace foe::fft
