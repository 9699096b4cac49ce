#pragma once

// Serial reference implementations used as independent oracles by the test
// and benchmark targets. Deliberately naive: direct DFT sums, quadruple-loop
// convolutions, no OpenMP, no shared code with the main kernels.

#include <complex>
#include <cstdint>
#include <vector>

#include "foe/tensor.hpp"

namespace foe::ref {

// O(n^2) DFT over the last two axes with orthonormal scaling.
Tensor dft2_ortho(const Tensor& in, bool inverse);

// "Same" zero-padded cross-correlation, x [Cin,H,W], w [Cout,Cin,kh,kw].
Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias);

// x [Cin,D,H,W], w [Cout,Cin,kd,kh,kw].
Tensor conv3d_same(const Tensor& x, const Tensor& w, const Tensor& bias);

// Circular convolution of x [H,W] with kernel k [H,W] whose index 0 is zero
// displacement.
Tensor circular_conv2d(const Tensor& x, const Tensor& k);

// Full linear convolution of a [ha,wa] with b [hb,wb] -> [ha+hb-1, wa+wb-1].
Tensor linear_conv2d_full(const Tensor& a, const Tensor& b);

// Dense Gaussian blur with zero boundary, truncated at 4 sigma.
Tensor gaussian_blur2d(const Tensor& in, double sigma);

// Block sum pooling over the last two axes.
Tensor sum_pool2(const Tensor& in, int64_t factor);

// Single-parameter Adam trace: starting at x0, takes `steps` steps against
// gradient g(x) with the given hyperparameters, returning every iterate.
std::vector<double> adam_scalar_trace(double x0, double lr, double beta1,
                                      double beta2, double eps, int steps,
                                      double (*grad)(double));

}  // namespace foe::ref
