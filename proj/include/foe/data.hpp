#pragma once

#include <optional>
#include <string>
#include <vector>

#include "foe/rng.hpp"
#include "foe/tensor.hpp"

namespace foe::data {

// One row of the published dataset geometry table, camera pixels, plane
// count, physical span, and the optional illumination aperture.
struct DatasetSpec {
  std::string name;
  int64_t camera_h = 0;
  int64_t camera_w = 0;
  int64_t z_planes = 0;
  double span_z_um = 0.0;
  double span_y_um = 0.0;
  double span_x_um = 0.0;
  std::optional<double> aperture_diameter_um;

  std::string to_json() const;
  static DatasetSpec from_json(const std::string& text);
};

// Presets A-D; throws on unknown names.
DatasetSpec dataset_spec(const std::string& name);

// Uniform divisor with geometry ratios preserved.
DatasetSpec desk_scale(const DatasetSpec& spec, int64_t divisor);

// Synthetic nuclei phantom: soft Gaussian blobs at rejection-sampled
// non-overlapping centers over a uniform background.
struct PhantomParams {
  Shape dims = {8, 32, 32};  // [Z, Y, X]
  double voxel_um = 1.0;
  int64_t nucleus_count = 10;
  double radius_um_min = 1.5;
  double radius_um_max = 3.0;
  double intensity_min = 0.5;
  double intensity_max = 1.0;
  double background = 0.01;
  uint64_t seed = 1;

  std::string to_json() const;
  static PhantomParams from_json(const std::string& text);
};

Tensor generate_phantom(const PhantomParams& p);

struct AugmentOptions {
  bool flip_z = false;
  bool flip_y = false;
  bool rotate = false;       // pitch, yaw, roll via trilinear resampling
  double max_rotate_rad = 0.2;
  bool shift = false;
  double max_shift_px = 2.0;
  bool brightness = false;   // multiplicative scale
  double brightness_min = 0.5;
  double brightness_max = 1.5;
  bool background = false;   // additive level
  double background_max = 0.05;
};

Tensor augment(const Tensor& v, Rng& rng, const AugmentOptions& opts);

// Zeroes voxels outside a centered z-axis cylinder of the given diameter and
// height.
Tensor aperture_cutout(const Tensor& v, double diameter_um, double height_um,
                       double voxel_um);

struct Metrics {
  double psnr_db = 0.0;      // +inf for identical inputs
  double ms_ssim = 0.0;
  double l_hnmse = 0.0;
};

double psnr(const Tensor& truth, const Tensor& recon);
// Per-z-plane 2-D MS-SSIM with the standard 5-scale exponents, averaged over
// planes; the scale count shrinks when the 11x11 window no longer fits.
double ms_ssim(const Tensor& truth, const Tensor& recon);

Metrics metrics_eval(const Tensor& truth, const Tensor& recon);

}  // namespace foe::data
