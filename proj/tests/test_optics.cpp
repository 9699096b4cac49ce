#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "foe/optics.hpp"
#include "foe_ref/reference.hpp"
#include "testutil.hpp"

using namespace foe;
using namespace foe::optics;
namespace op = foe::ops;
using test::gradcheck;
using test::max_abs_diff;
using test::random_real;

namespace {

Tensor random_phase(const OpticsConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  return random_real({cfg.mask_pixels, cfg.mask_pixels}, rng, -3.0, 3.0);
}

int64_t disc_pixel_count(const OpticsConfig& cfg) {
  const Tensor a = aperture_mask(cfg);
  int64_t count = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.rdata()[i] > 0.5) ++count;
  return count;
}

}  // namespace

TEST_CASE("nyquist_params reproduces the reference sizing") {
  const auto p = nyquist_params(0.8, 0.532, 823.0);
  CHECK(p.dx_star_um == doctest::Approx(0.3325).epsilon(1e-12));
  CHECK(p.n_star_px == 2476);

  const auto q = nyquist_params(0.5, 1.0, 100.0);
  CHECK(q.dx_star_um == doctest::Approx(1.0));
  CHECK(q.n_star_px == 100);

  const auto r = nyquist_params(0.8, 0.532, 832.0);
  CHECK(r.dx_star_um == doctest::Approx(0.3325));
  CHECK(r.n_star_px == 2503);

  CHECK_THROWS_AS(nyquist_params(-0.5, 1.0, 10.0), ValidationError);
  CHECK_THROWS_AS(nyquist_params(0.5, 0.0, 10.0), ValidationError);
}

TEST_CASE("optics config validation") {
  OpticsConfig cfg = OpticsConfig::toy();
  CHECK_NOTHROW(cfg.validate());

  SUBCASE("NA above refractive index") {
    cfg.na = 1.4;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("mask pitch above the Nyquist bound") {
    cfg.mask_pixel_um = 0.65;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("camera pitch not an integer multiple") {
    cfg.camera_pixel_um = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("crop exceeding the simulation grid") {
    cfg.camera_h = 64;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("json round trip preserves fields") {
    const std::string text = cfg.to_json();
    const OpticsConfig back = OpticsConfig::from_json(text);
    CHECK(back.mask_pixels == cfg.mask_pixels);
    CHECK(back.camera_h == cfg.camera_h);
    CHECK(back.z_planes_um == cfg.z_planes_um);
    CHECK(back.photon_budget == doctest::Approx(cfg.photon_budget));
  }
}

TEST_CASE("point source spectrum properties") {
  const OpticsConfig cfg = OpticsConfig::toy();
  SUBCASE("z = 0 gives the all-ones field on the propagating disc") {
    const Tensor u = point_source_spectrum(cfg, 0.0);
    const Tensor a = aperture_mask(cfg);
    for (int64_t i = 0; i < u.numel(); ++i)
      if (a.rdata()[i] > 0.5)
        CHECK(std::abs(u.cdata()[i] - cdouble(1.0, 0.0)) < 1e-14);
  }
  SUBCASE("conjugate symmetry in z") {
    const Tensor up = point_source_spectrum(cfg, 7.5);
    const Tensor um = point_source_spectrum(cfg, -7.5);
    CHECK(max_abs_diff(up, um.conj()) < 1e-12);
  }
  SUBCASE("unit modulus on the propagating disc") {
    const Tensor u = point_source_spectrum(cfg, 10.0);
    const Tensor a = aperture_mask(cfg);
    for (int64_t i = 0; i < u.numel(); ++i)
      if (a.rdata()[i] > 0.5)
        CHECK(std::abs(std::abs(u.cdata()[i]) - 1.0) < 1e-12);
  }
}

TEST_CASE("pupil function is the aperture times a unit phase factor") {
  const OpticsConfig cfg = OpticsConfig::toy();
  SUBCASE("zero phase reduces to the binary disc") {
    Tape t;
    Var phi = t.leaf(Tensor::zeros({cfg.mask_pixels, cfg.mask_pixels}), false);
    const Tensor p = t.value(pupil_function(phi, cfg));
    CHECK(max_abs_diff(p, aperture_mask(cfg).to_complex()) < 1e-15);
  }
  SUBCASE("modulus is 0 or 1 for any phase") {
    Tape t;
    Var phi = t.leaf(random_phase(cfg, 41), false);
    const Tensor p = t.value(pupil_function(phi, cfg));
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double m = std::abs(p.cdata()[i]);
      CHECK((m < 1e-12 || std::abs(m - 1.0) < 1e-12));
    }
  }
  SUBCASE("disc pixel count approaches the analytic area at N = 256") {
    OpticsConfig big = OpticsConfig::toy();
    big.mask_pixels = 256;
    big.camera_h = big.camera_w = 64;
    big.validate();
    const double r =
        big.na / big.wavelength_um * double(big.mask_pixels) * big.mask_pixel_um;
    const double analytic = M_PI * r * r;
    const double count = double(disc_pixel_count(big));
    CHECK(std::abs(count - analytic) / analytic < 0.02);
  }
  SUBCASE("shape mismatch is rejected") {
    Tape t;
    Var phi = t.leaf(Tensor::zeros({8, 8}), false);
    CHECK_THROWS_AS((void)pupil_function(phi, cfg), ValidationError);
  }
}

TEST_CASE("PRF focus, energy, and shift equivariance") {
  const OpticsConfig cfg = OpticsConfig::toy();
  const int64_t n = cfg.mask_pixels;

  SUBCASE("unaberrated focus peaks at the DC-aligned pixel") {
    Tape t;
    Var phi = t.leaf(Tensor::zeros({n, n}), false);
    const Tensor prf = t.value(compute_prf(phi, 0.0, cfg));
    int64_t arg = 0;
    for (int64_t i = 1; i < prf.numel(); ++i)
      if (prf.rdata()[i] > prf.rdata()[arg]) arg = i;
    CHECK(arg == (n / 2) * n + n / 2);
  }

  SUBCASE("energy equals the disc pixel count for any phase and depth") {
    const double want = double(disc_pixel_count(cfg));
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Tape t;
      Var phi = t.leaf(random_phase(cfg, 100 + seed), false);
      for (double z : {-11.0, 0.0, 4.5}) {
        const Tensor prf = t.value(compute_prf(phi, z, cfg));
        CHECK(std::abs(prf.sum() - want) / want < 1e-9);
      }
    }
  }

  SUBCASE("a linear pupil ramp shifts the PRF circularly") {
    const int64_t dy = 3, dx = -5;
    Tensor kx, ky;
    freq_grids(cfg, kx, ky);
    Tensor ramp = Tensor::zeros({n, n});
    for (int64_t i = 0; i < ramp.numel(); ++i)
      ramp.rdata()[i] = 2.0 * M_PI *
                        (kx.rdata()[i] * double(dx) * cfg.mask_pixel_um +
                         ky.rdata()[i] * double(dy) * cfg.mask_pixel_um);
    const Tensor base_phi = random_phase(cfg, 7);
    Tensor shifted_phi = base_phi;
    for (int64_t i = 0; i < ramp.numel(); ++i)
      shifted_phi.rdata()[i] += ramp.rdata()[i];

    Tape t;
    const Tensor prf0 =
        t.value(compute_prf(t.leaf(base_phi, false), 3.0, cfg));
    const Tensor prf1 =
        t.value(compute_prf(t.leaf(shifted_phi, false), 3.0, cfg));
    const Tensor rolled = t.value(op::roll2(t.leaf(prf0, false), dy, dx));
    CHECK(max_abs_diff(prf1, rolled) / prf0.max() < 1e-9);
  }
}

TEST_CASE("taper mask window") {
  SUBCASE("deep interior saturates to one") {
    const Tensor t = taper_mask(96, 96, 5.0);
    CHECK(t.at(int64_t(48), int64_t(48)) >= 0.999);
  }
  SUBCASE("boundary pixels are exactly zero") {
    const Tensor t = taper_mask(16, 16, 5.0);
    for (int64_t j = 0; j < 16; ++j) {
      CHECK(t.at(int64_t(0), j) == 0.0);
      CHECK(t.at(int64_t(15), j) == 0.0);
      CHECK(t.at(j, int64_t(0)) == 0.0);
      CHECK(t.at(j, int64_t(15)) == 0.0);
    }
  }
  SUBCASE("monotone non-decreasing along inward rays") {
    const Tensor t = taper_mask(32, 32, 4.0);
    for (int64_t i = 0; i < 16; ++i)
      for (int64_t j = 1; j <= i; ++j) {
        CHECK(t.at(i, j) >= t.at(i, j - 1));
        CHECK(t.at(j, i) >= t.at(j - 1, i));
      }
  }
  CHECK_THROWS_AS(taper_mask(8, 8, 0.0), ValidationError);
}

TEST_CASE("PSF stack respects pooling conservation and focus ordering") {
  OpticsConfig cfg = OpticsConfig::toy();
  cfg.z_planes_um = {-20, -15, -10, -5, 0, 5, 10, 15, 20};
  cfg.validate();

  SUBCASE("random mask gives finite non-negative planes") {
    Tape t;
    Var phi = t.leaf(random_phase(cfg, 55), false);
    const auto planes = compute_psf_stack(phi, cfg);
    for (const Var& p : planes) {
      const Tensor& v = t.value(p);
      CHECK(v.all_finite());
      CHECK(v.min() >= 0.0);
      CHECK(same_shape(v.shape(), {cfg.camera_h, cfg.camera_w}));
    }
  }

  SUBCASE("sum pooling conserves the cropped and tapered energy") {
    Tape t;
    Var phi = t.leaf(random_phase(cfg, 56), false);
    Var prf = compute_prf(phi, 5.0, cfg);
    Var cropped = op::crop2(prf, cfg.crop_h(), cfg.crop_w());
    Var tapered = op::mul(
        cropped,
        t.constant(taper_mask(cfg.crop_h(), cfg.crop_w(), cfg.taper_width_px)));
    Var pooled = op::sum_pool2(tapered, cfg.pool_factor());
    CHECK(t.value(pooled).sum() ==
          doctest::Approx(t.value(tapered).sum()).epsilon(1e-12));
  }

  SUBCASE("flat mask focuses at z = 0") {
    Tape t;
    Var phi = t.leaf(Tensor::zeros({cfg.mask_pixels, cfg.mask_pixels}), false);
    const auto planes = compute_psf_stack(phi, cfg);
    double best_peak = -1.0;
    size_t best_z = 0;
    for (size_t zi = 0; zi < planes.size(); ++zi) {
      const double peak = t.value(planes[zi]).max();
      if (peak > best_peak) {
        best_peak = peak;
        best_z = zi;
      }
    }
    CHECK(cfg.z_planes_um[best_z] == 0.0);
  }
}

TEST_CASE("image_volume delta, linearity, and loop oracle") {
  const OpticsConfig cfg = OpticsConfig::toy();
  Tape t;
  Var phi = t.leaf(random_phase(cfg, 60), false);
  const auto psf = compute_psf_stack(phi, cfg);

  SUBCASE("a centered unit voxel images to its plane's PSF") {
    const size_t j = 1;
    std::vector<Var> vol;
    for (size_t p = 0; p < psf.size(); ++p) {
      Tensor v = Tensor::zeros({cfg.camera_h, cfg.camera_w});
      if (p == j) v.at(cfg.camera_h / 2, cfg.camera_w / 2) = 1.0;
      vol.push_back(t.leaf(v, false));
    }
    const Tensor mu = t.value(image_volume(psf, vol));
    CHECK(max_abs_diff(mu, t.value(psf[j])) < 1e-10);
  }

  SUBCASE("linear in the volume") {
    Rng rng(61);
    std::vector<Var> v1, v2, combo;
    const double alpha = 2.75;
    for (size_t p = 0; p < psf.size(); ++p) {
      const Tensor a = random_real({cfg.camera_h, cfg.camera_w}, rng, 0.0, 1.0);
      const Tensor b = random_real({cfg.camera_h, cfg.camera_w}, rng, 0.0, 1.0);
      Tensor c = a;
      for (int64_t i = 0; i < c.numel(); ++i)
        c.rdata()[i] = alpha * a.rdata()[i] + b.rdata()[i];
      v1.push_back(t.leaf(a, false));
      v2.push_back(t.leaf(b, false));
      combo.push_back(t.leaf(c, false));
    }
    const Tensor lhs = t.value(image_volume(psf, combo));
    const Tensor i1 = t.value(image_volume(psf, v1));
    const Tensor i2 = t.value(image_volume(psf, v2));
    Tensor rhs = i1;
    for (int64_t i = 0; i < rhs.numel(); ++i)
      rhs.rdata()[i] = alpha * i1.rdata()[i] + i2.rdata()[i];
    CHECK(max_abs_diff(lhs, rhs) < 1e-9);
  }

  SUBCASE("matches the naive planewise convolution oracle on Z=2 8x8") {
    Rng rng(62);
    Tape t2;
    std::vector<Var> s_planes, v_planes;
    Tensor want = Tensor::zeros({8, 8});
    for (int zi = 0; zi < 2; ++zi) {
      const Tensor s = random_real({8, 8}, rng, 0.0, 1.0);
      const Tensor v = random_real({8, 8}, rng, 0.0, 1.0);
      s_planes.push_back(t2.leaf(s, false));
      v_planes.push_back(t2.leaf(v, false));
      const Tensor full = ref::linear_conv2d_full(v, s);
      for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x)
          want.at(y, x) += full.at(y + 4, x + 4);
    }
    const Tensor got = t2.value(image_volume(s_planes, v_planes));
    CHECK(max_abs_diff(got, want) < 1e-10);
  }

  SUBCASE("plane count mismatch is rejected") {
    std::vector<Var> vol{t.leaf(Tensor::zeros({cfg.camera_h, cfg.camera_w}),
                                false)};
    CHECK_THROWS_AS((void)image_volume(psf, vol), ValidationError);
  }
}

TEST_CASE("shot noise model") {
  SUBCASE("zero intensity stays exactly zero") {
    Tape t;
    Var mu = t.leaf(Tensor::zeros({16, 16}), false);
    const Tensor c = t.value(apply_shot_noise(mu, uint64_t(5)));
    CHECK(c.abs_max() == 0.0);
  }
  SUBCASE("sample mean and variance match the Poisson surrogate") {
    Tape t;
    Var mu = t.leaf(Tensor::full({100000}, 100.0), false);
    const Tensor c = t.value(apply_shot_noise(mu, uint64_t(99)));
    CHECK(c.min() >= 0.0);
    const double mean = c.sum() / double(c.numel());
    CHECK(mean > 99.5);
    CHECK(mean < 100.5);
    double var = 0.0;
    for (int64_t i = 0; i < c.numel(); ++i) {
      const double d = c.rdata()[i] - mean;
      var += d * d;
    }
    var /= double(c.numel() - 1);
    CHECK(std::abs(var - 100.0) / 100.0 < 0.05);
  }
  SUBCASE("variance tracks mu at mu = 400") {
    Tape t;
    Var mu = t.leaf(Tensor::full({100000}, 400.0), false);
    const Tensor c = t.value(apply_shot_noise(mu, uint64_t(123)));
    double mean = c.sum() / double(c.numel());
    double var = 0.0;
    for (int64_t i = 0; i < c.numel(); ++i) {
      const double d = c.rdata()[i] - mean;
      var += d * d;
    }
    var /= double(c.numel() - 1);
    CHECK(std::abs(var - 400.0) / 400.0 < 0.05);
  }
  SUBCASE("negative intensities are rejected") {
    Tape t;
    Var mu = t.leaf(Tensor::full({4}, -0.5), false);
    CHECK_THROWS_AS((void)apply_shot_noise(mu, uint64_t(1)), NumericError);
  }
  SUBCASE("deterministic per seed") {
    Tape t;
    Var mu = t.leaf(Tensor::full({64}, 25.0), false);
    const Tensor a = t.value(apply_shot_noise(mu, uint64_t(7)));
    const Tensor b = t.value(apply_shot_noise(mu, uint64_t(7)));
    const Tensor c = t.value(apply_shot_noise(mu, uint64_t(8)));
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, c) > 0.0);
  }
  SUBCASE("pathwise gradient matches finite differences away from zero") {
    Rng rng(77);
    const Tensor mu = random_real({6, 6}, rng, 5.0, 50.0);
    const Tensor eps = draw_noise({6, 6}, 11);
    auto fn = [&](Tape&, const std::vector<Var>& v) {
      return op::mean_all(op::square(apply_shot_noise(v[0], eps)));
    };
    CHECK(gradcheck(fn, {mu}).max_rel_err < 1e-4);
  }
}

TEST_CASE("phase mask initializers") {
  OpticsConfig cfg = OpticsConfig::toy();
  cfg.mask_pixels = 96;
  cfg.camera_h = cfg.camera_w = 32;
  cfg.z_planes_um = {-10, -6, -2, 2, 6, 10};
  cfg.validate();

  SUBCASE("zeros initializer is all zero") {
    const Tensor phi = init_phase_mask(MaskInit::Zeros, cfg);
    CHECK(phi.abs_max() == 0.0);
  }

  SUBCASE("hexagonal offsets form a regular hexagon") {
    MaskInitParams params;
    params.lateral_radius_um = 4.0;
    std::vector<double> xs, ys;
    for (int m = 0; m < 6; ++m) {
      const double angle = 2.0 * M_PI * (double(m) + 0.5) / 6.0;
      xs.push_back(params.lateral_radius_um * std::cos(angle));
      ys.push_back(params.lateral_radius_um * std::sin(angle));
    }
    std::vector<double> dists;
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        dists.push_back(std::hypot(xs[i] - xs[j], ys[i] - ys[j]));
    std::sort(dists.begin(), dists.end());
    const double r = params.lateral_radius_um;
    // Regular hexagon signature: 6 sides R, 6 short diagonals sqrt(3) R,
    // 3 long diagonals 2R.
    for (int i = 0; i < 6; ++i) CHECK(dists[i] == doctest::Approx(r));
    for (int i = 6; i < 12; ++i)
      CHECK(dists[i] == doctest::Approx(std::sqrt(3.0) * r));
    for (int i = 12; i < 15; ++i)
      CHECK(dists[i] == doctest::Approx(2.0 * r));
  }

  SUBCASE("pencil initializer splits a point source into separated peaks") {
    MaskInitParams params;
    params.lateral_radius_um = 5.2;  // 8 camera px
    const Tensor phi = init_phase_mask(MaskInit::PencilsHex, cfg, params);
    Tape t;
    const auto psf = compute_psf_stack(t.leaf(phi, false), cfg, {3});
    const Tensor plane = t.value(psf[0]);
    const double peak = plane.max();
    // Local maxima above a fifth of the global peak.
    std::vector<std::pair<int64_t, int64_t>> peaks;
    for (int64_t i = 1; i < cfg.camera_h - 1; ++i)
      for (int64_t j = 1; j < cfg.camera_w - 1; ++j) {
        const double v = plane.at(i, j);
        if (v < 0.2 * peak) continue;
        bool is_max = true;
        for (int64_t u = -1; u <= 1 && is_max; ++u)
          for (int64_t w = -1; w <= 1; ++w) {
            if (u == 0 && w == 0) continue;
            if (plane.at(i + u, j + w) > v) {
              is_max = false;
              break;
            }
          }
        if (is_max) peaks.emplace_back(i, j);
      }
    REQUIRE(peaks.size() >= 2);
    const double designed_px = params.lateral_radius_um / cfg.camera_pixel_um;
    double best = 0.0;
    for (size_t a = 0; a < peaks.size(); ++a)
      for (size_t b = a + 1; b < peaks.size(); ++b)
        best = std::max(best, std::hypot(double(peaks[a].first - peaks[b].first),
                                         double(peaks[a].second - peaks[b].second)));
    CHECK(best >= designed_px);
  }

  SUBCASE("helix initializer differs from pencils and is finite") {
    const Tensor a = init_phase_mask(MaskInit::PencilsHex, cfg);
    const Tensor b = init_phase_mask(MaskInit::Helix, cfg);
    CHECK(a.all_finite());
    CHECK(b.all_finite());
    CHECK(max_abs_diff(a, b) > 1.0);
  }

  SUBCASE("unknown initializer name is rejected") {
    CHECK_THROWS_AS(mask_init_from_name("spiral"), ValidationError);
  }
}

TEST_CASE("PSF stack gradient matches finite differences on the 8px toy") {
  OpticsConfig cfg;
  cfg.mask_pixels = 8;
  cfg.mask_pixel_um = 0.325;
  cfg.camera_h = cfg.camera_w = 4;
  cfg.camera_pixel_um = 0.65;
  cfg.z_planes_um = {-1.5, 1.0};
  cfg.taper_width_px = 1.5;
  cfg.oversim_factor = 1.0;
  cfg.validate();

  Rng rng(90);
  const Tensor phi = random_real({8, 8}, rng, -2.0, 2.0);
  auto fn = [&](Tape&, const std::vector<Var>& v) {
    const auto planes = compute_psf_stack(v[0], cfg);
    Var acc = op::mean_all(op::square(planes[0]));
    for (size_t p = 1; p < planes.size(); ++p)
      acc = op::add(acc, op::mean_all(op::square(planes[p])));
    return acc;
  };
  CHECK(gradcheck(fn, {phi}).max_rel_err < 1e-4);
}
