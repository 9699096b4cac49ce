#include "foe/optics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "foe/fft.hpp"

namespace foe::optics {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;

namespace op = foe::ops;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int64_t OpticsConfig::pool_factor() const {
  const double ratio = camera_pixel_um / mask_pixel_um;
  const int64_t factor = int64_t(std::llround(ratio));
  FOE_CHECK(factor >= 1 && std::abs(ratio - double(factor)) < 1e-9,
            "camera pitch ", camera_pixel_um,
            " um must be an integer multiple of mask pitch ", mask_pixel_um);
  return factor;
}

void OpticsConfig::validate() const {
  FOE_CHECK(wavelength_um > 0 && na > 0 && refractive_index > 0 &&
                mask_pixel_um > 0 && camera_pixel_um > 0,
            "optics config requires positive physical parameters");
  FOE_CHECK(na <= refractive_index, "NA ", na, " exceeds refractive index ",
            refractive_index);
  const double nyquist = wavelength_um / (2.0 * na);
  FOE_CHECK(mask_pixel_um <= nyquist + 1e-12, "mask pitch ", mask_pixel_um,
            " um violates the Nyquist bound ", nyquist, " um");
  FOE_CHECK(mask_pixels >= 2 && mask_pixels % 2 == 0,
            "mask_pixels must be even and >= 2, got ", mask_pixels);
  FOE_CHECK(camera_h >= 1 && camera_w >= 1, "camera extents must be positive");
  FOE_CHECK(taper_width_px > 0, "taper width must be positive");
  FOE_CHECK(oversim_factor >= 1.0, "oversim factor must be >= 1");
  FOE_CHECK(photon_budget > 0, "photon budget must be positive");
  FOE_CHECK(!z_planes_um.empty(), "at least one z plane is required");
  const int64_t factor = pool_factor();
  FOE_CHECK(camera_h * factor <= mask_pixels &&
                camera_w * factor <= mask_pixels,
            "cropped optical field ", camera_h * factor, "x",
            camera_w * factor, " exceeds the ", mask_pixels,
            "-pixel simulation grid");
}

std::string OpticsConfig::to_json() const {
  nlohmann::json j;
  j["wavelength_um"] = wavelength_um;
  j["na"] = na;
  j["refractive_index"] = refractive_index;
  j["mask_pixels"] = mask_pixels;
  j["mask_pixel_um"] = mask_pixel_um;
  j["camera_pixels"] = {camera_h, camera_w};
  j["camera_pixel_um"] = camera_pixel_um;
  j["z_planes_um"] = z_planes_um;
  j["taper_width_px"] = taper_width_px;
  j["oversim_factor"] = oversim_factor;
  j["photon_budget"] = photon_budget;
  return j.dump(2);
}

OpticsConfig OpticsConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("config parse error: ", e.what()));
  }
  OpticsConfig cfg;
  try {
    cfg.wavelength_um = j.at("wavelength_um").get<double>();
    cfg.na = j.at("na").get<double>();
    cfg.refractive_index = j.at("refractive_index").get<double>();
    cfg.mask_pixels = j.at("mask_pixels").get<int64_t>();
    cfg.mask_pixel_um = j.at("mask_pixel_um").get<double>();
    const auto cam = j.at("camera_pixels");
    FOE_CHECK(cam.is_array() && cam.size() == 2,
              "camera_pixels must be [H, W]");
    cfg.camera_h = cam[0].get<int64_t>();
    cfg.camera_w = cam[1].get<int64_t>();
    cfg.camera_pixel_um = j.at("camera_pixel_um").get<double>();
    cfg.z_planes_um = j.at("z_planes_um").get<std::vector<double>>();
    cfg.taper_width_px = j.at("taper_width_px").get<double>();
    cfg.oversim_factor = j.at("oversim_factor").get<double>();
    cfg.photon_budget = j.at("photon_budget").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("config field error: ", e.what()));
  }
  cfg.validate();
  return cfg;
}

OpticsConfig OpticsConfig::toy() {
  OpticsConfig cfg;
  cfg.wavelength_um = 0.532;
  cfg.na = 0.8;
  cfg.refractive_index = 1.33;
  cfg.mask_pixels = 48;
  cfg.mask_pixel_um = 0.325;
  cfg.camera_h = 16;
  cfg.camera_w = 16;
  cfg.camera_pixel_um = 0.65;
  cfg.z_planes_um = {-8.0, 0.0, 8.0};
  cfg.taper_width_px = 5.0;
  cfg.oversim_factor = 1.5;
  cfg.photon_budget = 1000.0;
  cfg.validate();
  return cfg;
}

OpticsConfig OpticsConfig::gradcheck_toy() {
  OpticsConfig cfg;
  cfg.mask_pixels = 16;
  cfg.mask_pixel_um = 0.325;
  cfg.camera_h = 8;
  cfg.camera_w = 8;
  cfg.camera_pixel_um = 0.65;
  cfg.z_planes_um = {-2.0, 2.0};
  cfg.taper_width_px = 2.0;
  cfg.oversim_factor = 1.0;
  cfg.photon_budget = 400.0;
  cfg.validate();
  return cfg;
}

NyquistParams nyquist_params(double na, double wavelength_um, double fov_um) {
  FOE_CHECK(na > 0 && wavelength_um > 0 && fov_um > 0,
            "nyquist_params requires positive inputs");
  const double dx = wavelength_um / (2.0 * na);
  return {dx, int64_t(std::ceil(fov_um / dx))};
}

MaskInit mask_init_from_name(const std::string& name) {
  if (name == "zeros") return MaskInit::Zeros;
  if (name == "pencils_hex") return MaskInit::PencilsHex;
  if (name == "helix") return MaskInit::Helix;
  throw ValidationError("unknown phase mask initializer: " + name);
}

const char* mask_init_name(MaskInit kind) {
  switch (kind) {
    case MaskInit::Zeros: return "zeros";
    case MaskInit::PencilsHex: return "pencils_hex";
    case MaskInit::Helix: return "helix";
  }
  return "?";
}

void freq_grids(const OpticsConfig& cfg, Tensor& kx, Tensor& ky) {
  const int64_t n = cfg.mask_pixels;
  const double dk = 1.0 / (double(n) * cfg.mask_pixel_um);
  kx = Tensor::zeros({n, n});
  ky = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) {
    const double fy = double(i - n / 2) * dk;
    for (int64_t j = 0; j < n; ++j) {
      const double fx = double(j - n / 2) * dk;
      ky.at(i, j) = fy;
      kx.at(i, j) = fx;
    }
  }
}

Tensor freq_sq_grid(const OpticsConfig& cfg) {
  Tensor kx, ky;
  freq_grids(cfg, kx, ky);
  Tensor k2 = Tensor::zeros(kx.shape());
  for (int64_t i = 0; i < k2.numel(); ++i)
    k2.rdata()[i] = kx.rdata()[i] * kx.rdata()[i] + ky.rdata()[i] * ky.rdata()[i];
  return k2;
}

Tensor aperture_mask(const OpticsConfig& cfg) {
  const Tensor k2 = freq_sq_grid(cfg);
  const double cutoff_sq =
      (cfg.na / cfg.wavelength_um) * (cfg.na / cfg.wavelength_um);
  Tensor a = Tensor::zeros(k2.shape());
  for (int64_t i = 0; i < k2.numel(); ++i)
    a.rdata()[i] = k2.rdata()[i] <= cutoff_sq ? 1.0 : 0.0;
  return a;
}

Tensor point_source_spectrum(const OpticsConfig& cfg, double z_um) {
  const Tensor k2 = freq_sq_grid(cfg);
  const double n_over_lambda =
      cfg.refractive_index / cfg.wavelength_um;
  const double n2 = n_over_lambda * n_over_lambda;
  Tensor u = Tensor::zeros(k2.shape(), DType::C128);
  for (int64_t i = 0; i < k2.numel(); ++i) {
    const double radicand = n2 - k2.rdata()[i];
    if (radicand < 0.0) continue;  // evanescent, clamped to zero
    const double phase = kTwoPi * z_um * std::sqrt(radicand);
    u.cdata()[i] = cdouble(std::cos(phase), std::sin(phase));
  }
  return u;
}

Tensor taper_mask(int64_t h, int64_t w, double width_px) {
  FOE_CHECK(width_px > 0, "taper width must be positive");
  Tensor t = Tensor::zeros({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      const double d = double(std::min(std::min(i, h - 1 - i),
                                       std::min(j, w - 1 - j)));
      t.at(i, j) = 2.0 * sigmoid(d / width_px) - 1.0;
    }
  return t;
}

Tensor init_phase_mask(MaskInit kind, const OpticsConfig& cfg,
                       const MaskInitParams& params) {
  const int64_t n = cfg.mask_pixels;
  if (kind == MaskInit::Zeros) return Tensor::zeros({n, n});

  const int wedges = params.wedges;
  FOE_CHECK(wedges >= 2, "wedge initializers need at least 2 wedges");
  const double radius =
      params.lateral_radius_um > 0.0
          ? params.lateral_radius_um
          : 0.25 * double(cfg.crop_w()) * cfg.mask_pixel_um;

  const double z_lo = *std::min_element(cfg.z_planes_um.begin(),
                                        cfg.z_planes_um.end());
  const double z_hi = *std::max_element(cfg.z_planes_um.begin(),
                                        cfg.z_planes_um.end());

  std::vector<double> xs(static_cast<size_t>(wedges));
  std::vector<double> ys(static_cast<size_t>(wedges));
  std::vector<double> zs(static_cast<size_t>(wedges));
  for (int m = 0; m < wedges; ++m) {
    double angle;
    if (kind == MaskInit::PencilsHex) {
      // Hexagonal ring: one offset per wedge at the sector center angle.
      angle = kTwoPi * (double(m) + 0.5) / double(wedges);
    } else {
      // Helix: tilt direction rotates continuously with assigned depth.
      angle = kTwoPi * params.helix_turns * double(m) / double(wedges);
    }
    xs[size_t(m)] = radius * std::cos(angle);
    ys[size_t(m)] = radius * std::sin(angle);
    zs[size_t(m)] = wedges == 1 ? 0.5 * (z_lo + z_hi)
                                : z_lo + (z_hi - z_lo) * double(m) /
                                             double(wedges - 1);
  }

  Tensor kx, ky;
  freq_grids(cfg, kx, ky);
  const double n_over_lambda = cfg.refractive_index / cfg.wavelength_um;
  const double n2 = n_over_lambda * n_over_lambda;
  Tensor phi = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      const double fx = kx.at(i, j);
      const double fy = ky.at(i, j);
      double theta = std::atan2(fy, fx);
      if (theta < 0) theta += kTwoPi;
      int m = int(theta / (kTwoPi / double(wedges)));
      m = std::min(m, wedges - 1);
      // Tilt toward the wedge's lateral offset plus defocus cancelling
      // u_point at the wedge's assigned depth.
      const double k2 = fx * fx + fy * fy;
      const double axial = std::sqrt(std::max(n2 - k2, 0.0));
      phi.at(i, j) = kTwoPi * (fx * xs[size_t(m)] + fy * ys[size_t(m)]) -
                     kTwoPi * zs[size_t(m)] * axial;
    }
  return phi;
}

Var pupil_function(Var phi, const OpticsConfig& cfg) {
  Tape& t = *phi.tape;
  const Tensor& vphi = t.value(phi);
  FOE_CHECK(vphi.rank() == 2 && vphi.dim(0) == cfg.mask_pixels &&
                vphi.dim(1) == cfg.mask_pixels,
            "phase mask shape ", shape_str(vphi.shape()),
            " does not match the ", cfg.mask_pixels, "-pixel grid");
  Var a = t.constant(aperture_mask(cfg));
  return op::rcmul(a, op::exp_i(phi));
}

Var compute_prf(Var phi, double z_um, const OpticsConfig& cfg) {
  Tape& t = *phi.tape;
  Var pupil = pupil_function(phi, cfg);
  Var u_pupil = op::cmul(t.constant(point_source_spectrum(cfg, z_um)), pupil);
  Var field = op::fft2(op::ifftshift2(u_pupil));
  return op::fftshift2(op::abs2(field));
}

std::vector<Var> compute_psf_stack(Var phi, const OpticsConfig& cfg) {
  std::vector<int64_t> all(cfg.z_planes_um.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = int64_t(i);
  return compute_psf_stack(phi, cfg, all);
}

std::vector<Var> compute_psf_stack(Var phi, const OpticsConfig& cfg,
                                   const std::vector<int64_t>& plane_indices) {
  cfg.validate();
  Tape& t = *phi.tape;
  const int64_t factor = cfg.pool_factor();
  const int64_t crop_h = cfg.crop_h();
  const int64_t crop_w = cfg.crop_w();
  Var taper = t.constant(taper_mask(crop_h, crop_w, cfg.taper_width_px));
  std::vector<Var> planes;
  planes.reserve(plane_indices.size());
  for (int64_t zi : plane_indices) {
    FOE_CHECK(zi >= 0 && zi < cfg.z_count(), "plane index ", zi,
              " out of range");
    Var prf = compute_prf(phi, cfg.z_planes_um[size_t(zi)], cfg);
    Var cropped = op::crop2(prf, crop_h, crop_w);
    Var tapered = op::mul(cropped, taper);
    planes.push_back(op::sum_pool2(tapered, factor));
  }
  return planes;
}

Var image_volume(const std::vector<Var>& psf_planes,
                 const std::vector<Var>& volume_planes) {
  FOE_CHECK(!psf_planes.empty(), "image_volume: empty plane list");
  FOE_CHECK(psf_planes.size() == volume_planes.size(),
            "image_volume: ", psf_planes.size(), " PSF planes vs ",
            volume_planes.size(), " volume planes");
  Tape& t = *psf_planes[0].tape;

  const Tensor& s0 = t.value(psf_planes[0]);
  FOE_CHECK(s0.rank() == 2, "PSF planes must be [H, W]");
  const int64_t h = s0.dim(0), w = s0.dim(1);

  Var total{};
  for (size_t p = 0; p < psf_planes.size(); ++p) {
    Var s = psf_planes[p];
    Var v = volume_planes[p];
    const Tensor& vv = t.value(v);
    FOE_CHECK(vv.rank() == 2, "volume planes must be [Y, X]");
    const int64_t vy = vv.dim(0), vx = vv.dim(1);
    const int64_t lh = fft::next_pow2(h + vy - 1);
    const int64_t lw = fft::next_pow2(w + vx - 1);
    // Linear convolution: corner-anchored zero padding, spectral product,
    // and the camera-aligned crop starting at the volume plane's center.
    Var fs = op::fft2(op::pad2_at(s, lh, lw, 0, 0));
    Var fv = op::fft2(op::pad2_at(v, lh, lw, 0, 0));
    Var conv = op::real_part(op::ifft2(op::cmul(fs, fv)));
    Var scaled = op::scale(conv, std::sqrt(double(lh) * double(lw)));
    Var cam = op::crop2_at(scaled, vy / 2, vx / 2, h, w);
    total = p == 0 ? cam : op::add(total, cam);
  }
  return total;
}

Tensor draw_noise(const Shape& shape, uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x5deece66dULL));
  Tensor eps = Tensor::zeros(shape);
  for (int64_t i = 0; i < eps.numel(); ++i) eps.rdata()[i] = rng.normal();
  return eps;
}

Var apply_shot_noise(Var mu, const Tensor& eps) {
  Tape& t = *mu.tape;
  const Tensor& vmu = t.value(mu);
  FOE_CHECK(!vmu.is_complex(), "shot noise expects real intensities");
  FOE_CHECK(same_shape(vmu.shape(), eps.shape()),
            "noise shape does not match intensity shape");
  const double floor = vmu.min();
  FOE_NUMERIC_CHECK(floor >= -1e-9, "negative expected intensity ", floor);

  Tensor out = Tensor::zeros(vmu.shape());
  for (int64_t i = 0; i < vmu.numel(); ++i) {
    const double m = std::max(vmu.rdata()[i], 0.0);
    out.rdata()[i] =
        std::max(m + std::sqrt(m) * eps.rdata()[i], 0.0);
  }
  // Pathwise derivative 1 + eps/(2 sqrt(mu + 1e-12)) on the unrectified
  // branch, zero on the rectified branch.
  return t.record(std::move(out), {mu}, [mu, eps](Tape& tp, const Tensor& g) {
    const Tensor& vmu = tp.value(mu);
    Tensor gm = Tensor::zeros(vmu.shape());
    for (int64_t i = 0; i < vmu.numel(); ++i) {
      const double m = std::max(vmu.rdata()[i], 0.0);
      const double unrect = m + std::sqrt(m) * eps.rdata()[i];
      if (unrect < 0.0) continue;
      gm.rdata()[i] =
          g.rdata()[i] * (1.0 + eps.rdata()[i] / (2.0 * std::sqrt(m + 1e-12)));
    }
    tp.accumulate_grad(mu.id, gm);
  });
}

Var apply_shot_noise(Var mu, uint64_t seed) {
  return apply_shot_noise(mu, draw_noise(mu.tape->value(mu).shape(), seed));
}

Var camera_exposure(Var mu, Var psf_energy, double photon_budget,
                    const Tensor& eps) {
  Tape& t = *mu.tape;
  FOE_CHECK(photon_budget > 0, "photon budget must be positive");
  FOE_CHECK(t.value(psf_energy).numel() == 1,
            "psf_energy must be a scalar");
  Var flux = op::mul(mu, op::recip(psf_energy));
  if (t.value(flux).max() <= 0.0) return apply_shot_noise(flux, eps);
  Var gain = op::scale(op::recip(op::max_all(flux)), photon_budget);
  Var photons = apply_shot_noise(op::mul(flux, gain), eps);
  return op::mul(photons, op::recip(gain));
}

Tensor compute_psf_stack_tensor(const Tensor& phi, const OpticsConfig& cfg) {
  Tensor out =
      Tensor::zeros({cfg.z_count(), cfg.camera_h, cfg.camera_w});
  const int64_t stride = cfg.camera_h * cfg.camera_w;
  for (int64_t zi = 0; zi < cfg.z_count(); ++zi) {
    Tape tape;
    Var phi_var = tape.leaf(phi, false);
    const auto planes = compute_psf_stack(phi_var, cfg, {zi});
    const Tensor& v = tape.value(planes[0]);
    std::copy(v.rdata(), v.rdata() + stride, out.rdata() + zi * stride);
  }
  return out;
}

Tensor stack_planes(Tape& tape, const std::vector<Var>& planes) {
  FOE_CHECK(!planes.empty(), "stack_planes: empty list");
  const Tensor& first = tape.value(planes[0]);
  Shape shape = first.shape();
  shape.insert(shape.begin(), int64_t(planes.size()));
  Tensor out = Tensor::zeros(shape, first.dtype());
  const int64_t stride = first.numel();
  for (size_t p = 0; p < planes.size(); ++p) {
    const Tensor& v = tape.value(planes[p]);
    FOE_CHECK(same_shape(v.shape(), first.shape()),
              "stack_planes: inconsistent plane shapes");
    if (v.is_complex())
      std::copy(v.cdata(), v.cdata() + stride, out.cdata() + int64_t(p) * stride);
    else
      std::copy(v.rdata(), v.rdata() + stride, out.rdata() + int64_t(p) * stride);
  }
  return out;
}

}  // namespace foe::optics
