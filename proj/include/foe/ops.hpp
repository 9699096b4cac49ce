#pragma once

#include <vector>

#include "foe/tape.hpp"

namespace foe::ops {

enum class PadCropMode { ZeroPad, CenterCrop };
enum class PoolMode { SumPool, NearestUpsample };

// ---- arithmetic / elementwise ------------------------------------------
// Binary ops need equal shapes; a real scalar operand broadcasts.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // real*real, complex*complex, or real-scalar*any
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var relu(Var a);                    // rectify_max0; derivative 1 at 0
Var leaky_relu(Var a, double slope);
Var sqrt_(Var a);                   // real, errors on negative input
Var square(Var a);
Var recip(Var a);

// ---- complex -------------------------------------------------------------
Var to_complex(Var a);
Var real_part(Var a);
Var abs2(Var a);        // |z|^2, real output
Var cmul(Var a, Var b); // complex elementwise product
Var rcmul(Var r, Var z);
Var exp_i(Var a);       // real -> exp(i a)

// ---- FFT / spectral (act on the last two axes, batched over the rest) ----
Var fft2(Var a, bool inverse = false);
inline Var ifft2(Var a) { return fft2(a, true); }
Var roll2(Var a, int64_t dy, int64_t dx);
Var fftshift2(Var a);
Var ifftshift2(Var a);
// Centered band-limit of a DFT-ordered spectrum, rescaled so that an
// inverse transform yields the mean-preserving downsampled signal.
Var spectral_crop(Var a, int64_t out_h, int64_t out_w);

// ---- padding / cropping (centered, batched over leading axes) -----------
Var pad_crop_spatial(Var a, int64_t target_h, int64_t target_w, PadCropMode mode);
Var pad2(Var a, int64_t target_h, int64_t target_w);
Var crop2(Var a, int64_t target_h, int64_t target_w);
// Corner-anchored variants used for linear convolution layouts.
Var pad2_at(Var a, int64_t target_h, int64_t target_w, int64_t oy, int64_t ox);
Var crop2_at(Var a, int64_t oy, int64_t ox, int64_t out_h, int64_t out_w);

// ---- pooling / resampling -------------------------------------------------
Var pool_resample(Var a, int64_t factor, PoolMode mode);
Var sum_pool2(Var a, int64_t factor);
Var upsample_nearest2(Var a, int64_t factor);
Var max_pool2(Var a);  // 2x2, stride 2

// ---- convolution / normalization -----------------------------------------
// x [Cin,H,W], w [Cout,Cin,kh,kw] with odd extents, bias [Cout]; "same"
// zero-padded cross-correlation.
Var conv2d(Var x, Var w, Var bias);
// x [Cin,D,H,W], w [Cout,Cin,kd,kh,kw].
Var conv3d(Var x, Var w, Var bias);
Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Per-plane Gaussian blur over the last two axes, truncated at 4 sigma,
// zero boundary.
Var gaussian_blur2d(Var a, double sigma);

// ---- reductions / selection ------------------------------------------------
Var sum_all(Var a);
Var mean_all(Var a);
Var max_all(Var a);     // gradient routed to the first max
Var median_all(Var a);  // lower median; gradient routed to selected element

// ---- structure --------------------------------------------------------------
Var reshape(Var a, Shape shape);
Var concat0(const std::vector<Var>& parts);
Var gather_planes(Var a, std::vector<int64_t> planes);

}  // namespace foe::ops
