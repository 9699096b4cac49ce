#pragma once

#include <optional>
#include <string>
#include <vector>

#include "foe/ops.hpp"
#include "foe/rng.hpp"
#include "foe/tape.hpp"

namespace foe::optics {

// 4f microscope geometry and simulation settings. The phase mask lives on an
// N x N grid of pitch mask_pixel_um; the camera samples the image plane at
// camera_pixel_um, which must be an integer multiple of the mask pitch. The
// PSF is simulated on the full mask grid (oversim_factor larger than the
// cropped optical field) before crop, taper, and sum-pool downsampling.
struct OpticsConfig {
  double wavelength_um = 0.532;
  double na = 0.8;
  double refractive_index = 1.33;
  int64_t mask_pixels = 48;
  double mask_pixel_um = 0.325;
  int64_t camera_h = 16;
  int64_t camera_w = 16;
  double camera_pixel_um = 0.65;
  std::vector<double> z_planes_um = {-8.0, 0.0, 8.0};
  double taper_width_px = 5.0;
  double oversim_factor = 1.5;
  double photon_budget = 1000.0;

  int64_t pool_factor() const;  // camera pitch / mask pitch
  int64_t crop_h() const { return camera_h * pool_factor(); }
  int64_t crop_w() const { return camera_w * pool_factor(); }
  int64_t z_count() const { return int64_t(z_planes_um.size()); }

  void validate() const;

  std::string to_json() const;
  static OpticsConfig from_json(const std::string& text);

  // Scaled-down but Nyquist-consistent default used across the test suite.
  static OpticsConfig toy();
  // Minimal grid for finite-difference checks of the full pipeline.
  static OpticsConfig gradcheck_toy();
};

struct NyquistParams {
  double dx_star_um;
  int64_t n_star_px;
};

// dx* = lambda / (2 NA); N* = ceil(fov / dx*).
NyquistParams nyquist_params(double na, double wavelength_um, double fov_um);

enum class MaskInit { Zeros, PencilsHex, Helix };

MaskInit mask_init_from_name(const std::string& name);
const char* mask_init_name(MaskInit kind);

struct MaskInitParams {
  // Lateral offset radius of the pencil/helix pattern; <= 0 picks a quarter
  // of the cropped field of view.
  double lateral_radius_um = 0.0;
  int wedges = 6;
  double helix_turns = 1.0;
};

// Frequency-space grids in DC-centered order, cycles/um.
Tensor freq_sq_grid(const OpticsConfig& cfg);              // |k|^2
void freq_grids(const OpticsConfig& cfg, Tensor& kx, Tensor& ky);

// Binary NA disc a(k) in DC-centered order.
Tensor aperture_mask(const OpticsConfig& cfg);

// Unit-modulus defocus field u_point(k; z), zero where evanescent.
Tensor point_source_spectrum(const OpticsConfig& cfg, double z_um);

// Sigmoid-of-edge-distance window rescaled so boundary pixels are exactly 0.
Tensor taper_mask(int64_t h, int64_t w, double width_px);

// Phase mask initializers; output is DC-centered [N, N] radians.
Tensor init_phase_mask(MaskInit kind, const OpticsConfig& cfg,
                       const MaskInitParams& params = {});

// Differentiable pipeline pieces. Phase masks are DC-centered.
Var pupil_function(Var phi, const OpticsConfig& cfg);
Var compute_prf(Var phi, double z_um, const OpticsConfig& cfg);

// Per-plane camera-pitch PSFs: crop to the optical field, taper, sum-pool.
std::vector<Var> compute_psf_stack(Var phi, const OpticsConfig& cfg);
std::vector<Var> compute_psf_stack(Var phi, const OpticsConfig& cfg,
                                   const std::vector<int64_t>& plane_indices);

// Planewise linear convolution of volume planes with PSF planes, summed in
// ascending plane order; output is camera sized.
Var image_volume(const std::vector<Var>& psf_planes,
                 const std::vector<Var>& volume_planes);

// Rectified-Gaussian shot noise c = max(mu + sqrt(mu) eps, 0) with the
// pathwise derivative through a sqrt(mu + 1e-12) guard.
Var apply_shot_noise(Var mu, const Tensor& eps);
Var apply_shot_noise(Var mu, uint64_t seed);
Tensor draw_noise(const Shape& shape, uint64_t seed);

// Camera formation used by the simulation and training paths: the expected
// image is divided by the total PSF energy so camera values live in
// volume-flux units, shot noise is applied at the photon scale set by
// photon_budget (peak photons per pixel), and the frame is returned in flux
// units. Differentiable in mu and psf_energy.
Var camera_exposure(Var mu, Var psf_energy, double photon_budget,
                    const Tensor& eps);

// Materializes a [Z, H, W] stack from per-plane Vars.
Tensor stack_planes(Tape& tape, const std::vector<Var>& planes);

// Gradient-free full stack, one scoped tape per plane so large grids do not
// accumulate graph memory.
Tensor compute_psf_stack_tensor(const Tensor& phi, const OpticsConfig& cfg);

}  // namespace foe::optics
