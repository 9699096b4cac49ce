#include "foe/data.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "foe/train.hpp"

namespace foe::data {

std::string DatasetSpec::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["camera_px"] = {camera_h, camera_w};
  j["z_planes"] = z_planes;
  j["span_um"] = {span_z_um, span_y_um, span_x_um};
  if (aperture_diameter_um)
    j["aperture_diameter_um"] = *aperture_diameter_um;
  return j.dump(2);
}

DatasetSpec DatasetSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("dataset spec parse error: ", e.what()));
  }
  DatasetSpec s;
  try {
    s.name = j.value("name", "custom");
    s.camera_h = j.at("camera_px")[0].get<int64_t>();
    s.camera_w = j.at("camera_px")[1].get<int64_t>();
    s.z_planes = j.at("z_planes").get<int64_t>();
    s.span_z_um = j.at("span_um")[0].get<double>();
    s.span_y_um = j.at("span_um")[1].get<double>();
    s.span_x_um = j.at("span_um")[2].get<double>();
    if (j.contains("aperture_diameter_um"))
      s.aperture_diameter_um = j["aperture_diameter_um"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("dataset spec field error: ", e.what()));
  }
  return s;
}

DatasetSpec dataset_spec(const std::string& name) {
  DatasetSpec s;
  s.name = name;
  if (name == "A") {
    s.camera_h = s.camera_w = 512;
    s.z_planes = 12;
    s.span_z_um = 25;
    s.span_y_um = s.span_x_um = 832;
    s.aperture_diameter_um = 386;
  } else if (name == "B") {
    s.camera_h = s.camera_w = 512;
    s.z_planes = 128;
    s.span_z_um = 250;
    s.span_y_um = s.span_x_um = 832;
    s.aperture_diameter_um = 386;
  } else if (name == "C") {
    s.camera_h = s.camera_w = 512;
    s.z_planes = 128;
    s.span_z_um = 250;
    s.span_y_um = s.span_x_um = 832;
    s.aperture_diameter_um = std::nullopt;
  } else if (name == "D") {
    s.camera_h = s.camera_w = 256;
    s.z_planes = 96;
    s.span_z_um = 200;
    s.span_y_um = s.span_x_um = 416;
    s.aperture_diameter_um = 193;
  } else {
    throw ValidationError("unknown dataset preset: " + name);
  }
  return s;
}

DatasetSpec desk_scale(const DatasetSpec& spec, int64_t divisor) {
  FOE_CHECK(divisor >= 1, "desk_scale divisor must be >= 1");
  FOE_CHECK(spec.camera_h % divisor == 0 && spec.camera_w % divisor == 0 &&
                spec.z_planes % divisor == 0,
            "divisor ", divisor, " does not divide the ", spec.name,
            " geometry");
  DatasetSpec s = spec;
  s.name = spec.name + "/" + std::to_string(divisor);
  s.camera_h /= divisor;
  s.camera_w /= divisor;
  s.z_planes /= divisor;
  s.span_z_um /= double(divisor);
  s.span_y_um /= double(divisor);
  s.span_x_um /= double(divisor);
  if (s.aperture_diameter_um) *s.aperture_diameter_um /= double(divisor);
  return s;
}

std::string PhantomParams::to_json() const {
  nlohmann::json j;
  j["dims"] = dims;
  j["voxel_um"] = voxel_um;
  j["nucleus_count"] = nucleus_count;
  j["radius_um"] = {radius_um_min, radius_um_max};
  j["intensity"] = {intensity_min, intensity_max};
  j["background"] = background;
  j["seed"] = seed;
  return j.dump(2);
}

PhantomParams PhantomParams::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("phantom params parse error: ", e.what()));
  }
  PhantomParams p;
  try {
    p.dims = j.at("dims").get<Shape>();
    p.voxel_um = j.value("voxel_um", 1.0);
    p.nucleus_count = j.value("nucleus_count", int64_t(10));
    if (j.contains("radius_um")) {
      p.radius_um_min = j["radius_um"][0].get<double>();
      p.radius_um_max = j["radius_um"][1].get<double>();
    }
    if (j.contains("intensity")) {
      p.intensity_min = j["intensity"][0].get<double>();
      p.intensity_max = j["intensity"][1].get<double>();
    }
    p.background = j.value("background", 0.01);
    p.seed = j.value("seed", uint64_t(1));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("phantom params field error: ", e.what()));
  }
  return p;
}

Tensor generate_phantom(const PhantomParams& p) {
  FOE_CHECK(p.dims.size() == 3, "phantom dims must be [Z, Y, X]");
  FOE_CHECK(p.nucleus_count >= 0, "nucleus count must be non-negative");
  FOE_CHECK(p.radius_um_min > 0 && p.radius_um_max >= p.radius_um_min,
            "invalid radius range");
  FOE_CHECK(p.radius_um_min / p.voxel_um >= 1.0,
            "nuclei must span at least one voxel");
  FOE_CHECK(p.background >= 0, "background must be non-negative");

  const int64_t nz = p.dims[0], ny = p.dims[1], nx = p.dims[2];
  Tensor v = Tensor::full({nz, ny, nx}, p.background);
  Rng rng(splitmix64(p.seed ^ 0x7068616e746f6dULL));

  struct Blob {
    double z, y, x, r_vox, intensity;
  };
  std::vector<Blob> blobs;
  const int kMaxRetries = 500;
  for (int64_t n = 0; n < p.nucleus_count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      Blob b;
      b.r_vox = rng.uniform(p.radius_um_min, p.radius_um_max) / p.voxel_um;
      b.z = rng.uniform(b.r_vox, double(nz) - b.r_vox);
      b.y = rng.uniform(b.r_vox, double(ny) - b.r_vox);
      b.x = rng.uniform(b.r_vox, double(nx) - b.r_vox);
      b.intensity = rng.uniform(p.intensity_min, p.intensity_max);
      bool overlap = false;
      for (const Blob& other : blobs) {
        const double d = std::sqrt((b.z - other.z) * (b.z - other.z) +
                                   (b.y - other.y) * (b.y - other.y) +
                                   (b.x - other.x) * (b.x - other.x));
        if (d < b.r_vox + other.r_vox) {
          overlap = true;
          break;
        }
      }
      if (!overlap) {
        blobs.push_back(b);
        placed = true;
      }
    }
    FOE_CHECK(placed, "could not place nucleus ", n, " without overlap after ",
              kMaxRetries, " attempts");
  }

  for (const Blob& b : blobs) {
    const double sigma = b.r_vox / 2.0;
    const int64_t reach = int64_t(std::ceil(3.0 * sigma));
    const int64_t z0 = std::max<int64_t>(0, int64_t(b.z) - reach);
    const int64_t z1 = std::min<int64_t>(nz - 1, int64_t(b.z) + reach);
    const int64_t y0 = std::max<int64_t>(0, int64_t(b.y) - reach);
    const int64_t y1 = std::min<int64_t>(ny - 1, int64_t(b.y) + reach);
    const int64_t x0 = std::max<int64_t>(0, int64_t(b.x) - reach);
    const int64_t x1 = std::min<int64_t>(nx - 1, int64_t(b.x) + reach);
    for (int64_t z = z0; z <= z1; ++z)
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          const double d2 = (double(z) - b.z) * (double(z) - b.z) +
                            (double(y) - b.y) * (double(y) - b.y) +
                            (double(x) - b.x) * (double(x) - b.x);
          v.at(z, y, x) += b.intensity * std::exp(-d2 / (2.0 * sigma * sigma));
        }
  }
  return v;
}

namespace {

// Trilinear sample with zero fill outside the volume.
double sample_trilinear(const Tensor& v, double z, double y, double x) {
  const int64_t nz = v.dim(0), ny = v.dim(1), nx = v.dim(2);
  const int64_t z0 = int64_t(std::floor(z));
  const int64_t y0 = int64_t(std::floor(y));
  const int64_t x0 = int64_t(std::floor(x));
  const double fz = z - double(z0), fy = y - double(y0), fx = x - double(x0);
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int64_t zz = z0 + dz, yy = y0 + dy, xx = x0 + dx;
        if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx)
          continue;
        const double wz = dz ? fz : 1.0 - fz;
        const double wy = dy ? fy : 1.0 - fy;
        const double wx = dx ? fx : 1.0 - fx;
        acc += wz * wy * wx * v.at(zz, yy, xx);
      }
  return acc;
}

}  // namespace

Tensor augment(const Tensor& v, Rng& rng, const AugmentOptions& opts) {
  FOE_CHECK(v.rank() == 3, "augment expects a [Z, Y, X] volume");
  Tensor out = v;
  const int64_t nz = v.dim(0), ny = v.dim(1), nx = v.dim(2);

  const bool do_flip_z = opts.flip_z && rng.uniform() < 0.5;
  const bool do_flip_y = opts.flip_y && rng.uniform() < 0.5;
  if (do_flip_z || do_flip_y) {
    Tensor flipped = Tensor::zeros(v.shape());
    for (int64_t z = 0; z < nz; ++z)
      for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x)
          flipped.at(z, y, x) = out.at(do_flip_z ? nz - 1 - z : z,
                                       do_flip_y ? ny - 1 - y : y, x);
    out = std::move(flipped);
  }

  double pitch = 0, yaw = 0, roll = 0, sz = 0, sy = 0, sx = 0;
  if (opts.rotate) {
    pitch = rng.uniform(-opts.max_rotate_rad, opts.max_rotate_rad);
    yaw = rng.uniform(-opts.max_rotate_rad, opts.max_rotate_rad);
    roll = rng.uniform(-opts.max_rotate_rad, opts.max_rotate_rad);
  }
  if (opts.shift) {
    sz = rng.uniform(-opts.max_shift_px, opts.max_shift_px);
    sy = rng.uniform(-opts.max_shift_px, opts.max_shift_px);
    sx = rng.uniform(-opts.max_shift_px, opts.max_shift_px);
  }
  if (opts.rotate || opts.shift) {
    // Inverse-map each output voxel: rotation about the volume center
    // (pitch about x, yaw about z, roll about y), then the shift.
    const double cz = double(nz - 1) / 2.0;
    const double cy = double(ny - 1) / 2.0;
    const double cx = double(nx - 1) / 2.0;
    const double cp = std::cos(-pitch), sp = std::sin(-pitch);
    const double cyw = std::cos(-yaw), syw = std::sin(-yaw);
    const double cr = std::cos(-roll), sr = std::sin(-roll);
    Tensor warped = Tensor::zeros(v.shape());
    for (int64_t z = 0; z < nz; ++z)
      for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x) {
          double pz = double(z) - cz - sz;
          double py = double(y) - cy - sy;
          double px = double(x) - cx - sx;
          // yaw about z
          double qy = cyw * py - syw * px;
          double qx = syw * py + cyw * px;
          double qz = pz;
          // pitch about x
          double rz = cp * qz - sp * qy;
          double ry = sp * qz + cp * qy;
          double rx = qx;
          // roll about y
          double tz = cr * rz + sr * rx;
          double tx = -sr * rz + cr * rx;
          double ty = ry;
          warped.at(z, y, x) =
              sample_trilinear(out, tz + cz, ty + cy, tx + cx);
        }
    out = std::move(warped);
  }

  if (opts.brightness) {
    const double alpha = rng.uniform(opts.brightness_min, opts.brightness_max);
    for (int64_t i = 0; i < out.numel(); ++i) out.rdata()[i] *= alpha;
  }
  if (opts.background) {
    const double level = rng.uniform(0.0, opts.background_max);
    for (int64_t i = 0; i < out.numel(); ++i) out.rdata()[i] += level;
  }
  return out;
}

Tensor aperture_cutout(const Tensor& v, double diameter_um, double height_um,
                       double voxel_um) {
  FOE_CHECK(v.rank() == 3, "aperture_cutout expects a [Z, Y, X] volume");
  FOE_CHECK(diameter_um > 0 && height_um > 0 && voxel_um > 0,
            "cutout geometry must be positive");
  const int64_t nz = v.dim(0), ny = v.dim(1), nx = v.dim(2);
  const double radius_vox = 0.5 * diameter_um / voxel_um;
  const double half_height_vox = 0.5 * height_um / voxel_um;
  FOE_CHECK(2.0 * radius_vox <= double(std::max(ny, nx)) + 1e-9 &&
                2.0 * half_height_vox <= double(nz) + 1e-9,
            "cylinder ", diameter_um, " x ", height_um,
            " um exceeds the volume bounds");
  const double cz = double(nz - 1) / 2.0;
  const double cy = double(ny - 1) / 2.0;
  const double cx = double(nx - 1) / 2.0;
  Tensor out = v;
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x) {
        const double dz = std::abs(double(z) - cz);
        const double dr = std::hypot(double(y) - cy, double(x) - cx);
        if (dz > half_height_vox || dr > radius_vox) out.at(z, y, x) = 0.0;
      }
  return out;
}

double psnr(const Tensor& truth, const Tensor& recon) {
  FOE_CHECK(same_shape(truth.shape(), recon.shape()), "psnr: shape mismatch");
  double mse = 0.0;
  for (int64_t i = 0; i < truth.numel(); ++i) {
    const double d = truth.rdata()[i] - recon.rdata()[i];
    mse += d * d;
  }
  mse /= double(truth.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = truth.max();
  FOE_CHECK(peak > 0, "psnr: degenerate all-zero ground truth");
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int64_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

struct SsimMoments {
  double l = 0.0;   // luminance component mean
  double cs = 0.0;  // contrast-structure component mean
};

// Valid-region windowed SSIM components of one 2-D plane pair.
SsimMoments ssim_components(const std::vector<double>& a,
                            const std::vector<double>& b, int64_t h, int64_t w,
                            double c1, double c2) {
  static const std::vector<double> window = [] {
    std::vector<double> win(size_t(kSsimWindow * kSsimWindow));
    double total = 0.0;
    for (int64_t u = 0; u < kSsimWindow; ++u)
      for (int64_t v = 0; v < kSsimWindow; ++v) {
        const double du = double(u - kSsimWindow / 2);
        const double dv = double(v - kSsimWindow / 2);
        const double val =
            std::exp(-(du * du + dv * dv) / (2.0 * kSsimSigma * kSsimSigma));
        win[size_t(u * kSsimWindow + v)] = val;
        total += val;
      }
    for (double& v : win) v /= total;
    return win;
  }();

  const int64_t oh = h - kSsimWindow + 1;
  const int64_t ow = w - kSsimWindow + 1;
  SsimMoments m;
  int64_t count = 0;
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int64_t u = 0; u < kSsimWindow; ++u)
        for (int64_t v = 0; v < kSsimWindow; ++v) {
          const double wg = window[size_t(u * kSsimWindow + v)];
          const double va = a[size_t((i + u) * w + j + v)];
          const double vb = b[size_t((i + u) * w + j + v)];
          mu_a += wg * va;
          mu_b += wg * vb;
          aa += wg * va * va;
          bb += wg * vb * vb;
          ab += wg * va * vb;
        }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double l =
          (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
      const double cs = (2.0 * cov + c2) / (var_a + var_b + c2);
      m.l += l;
      m.cs += std::max(cs, 0.0);
      ++count;
    }
  m.l /= double(count);
  m.cs /= double(count);
  return m;
}

std::vector<double> downsample2(const std::vector<double>& a, int64_t h,
                                int64_t w) {
  const int64_t oh = h / 2, ow = w / 2;
  std::vector<double> out(size_t(oh * ow));
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j)
      out[size_t(i * ow + j)] =
          0.25 * (a[size_t(2 * i * w + 2 * j)] +
                  a[size_t(2 * i * w + 2 * j + 1)] +
                  a[size_t((2 * i + 1) * w + 2 * j)] +
                  a[size_t((2 * i + 1) * w + 2 * j + 1)]);
  return out;
}

double ms_ssim_plane(std::vector<double> a, std::vector<double> b, int64_t h,
                     int64_t w, double data_range) {
  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int scales = 0;
  {
    int64_t hh = h, ww = w;
    while (scales < 5 && hh >= kSsimWindow && ww >= kSsimWindow) {
      ++scales;
      hh /= 2;
      ww /= 2;
    }
  }
  FOE_CHECK(scales >= 1, "plane too small for the 11x11 SSIM window: ", h,
            "x", w);
  double weight_total = 0.0;
  for (int s = 0; s < scales; ++s) weight_total += kWeights[s];

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double value = 1.0;
  for (int s = 0; s < scales; ++s) {
    const SsimMoments m = ssim_components(a, b, h, w, c1, c2);
    const double weight = kWeights[s] / weight_total;
    if (s == scales - 1)
      value *= std::pow(std::max(m.l * m.cs, 0.0), weight);
    else
      value *= std::pow(std::max(m.cs, 0.0), weight);
    if (s + 1 < scales) {
      a = downsample2(a, h, w);
      b = downsample2(b, h, w);
      h /= 2;
      w /= 2;
    }
  }
  return value;
}

}  // namespace

double ms_ssim(const Tensor& truth, const Tensor& recon) {
  FOE_CHECK(same_shape(truth.shape(), recon.shape()),
            "ms_ssim: shape mismatch");
  FOE_CHECK(truth.rank() == 2 || truth.rank() == 3,
            "ms_ssim expects [Y, X] or [Z, Y, X]");
  const int64_t h = truth.dim(-2), w = truth.dim(-1);
  const int64_t planes = truth.numel() / (h * w);
  const double data_range = std::max(truth.max(), 1e-12);
  double total = 0.0;
  for (int64_t p = 0; p < planes; ++p) {
    std::vector<double> a(truth.rdata() + p * h * w,
                          truth.rdata() + (p + 1) * h * w);
    std::vector<double> b(recon.rdata() + p * h * w,
                          recon.rdata() + (p + 1) * h * w);
    total += ms_ssim_plane(std::move(a), std::move(b), h, w, data_range);
  }
  return total / double(planes);
}

Metrics metrics_eval(const Tensor& truth, const Tensor& recon) {
  FOE_CHECK(same_shape(truth.shape(), recon.shape()),
            "metrics_eval: shape mismatch");
  Metrics m;
  m.psnr_db = psnr(truth, recon);
  m.ms_ssim = ms_ssim(truth, recon);
  train::LossConfig cfg;
  cfg.beta = 0.0;
  Tape t;
  m.l_hnmse = t.value(train::loss(t.constant(recon), truth, cfg)).item();
  return m;
}

}  // namespace foe::data
