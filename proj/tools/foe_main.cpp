// foe: programmable 4f snapshot-microscope simulation, Fourier-domain
// reconstruction networks, and desk-scale training workflows.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "foe/data.hpp"
#include "foe/gradcheck.hpp"
#include "foe/io.hpp"
#include "foe/log.hpp"
#include "foe/net.hpp"
#include "foe/optics.hpp"
#include "foe/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace foe;
namespace op = foe::ops;

namespace {

// ---------------------------------------------------------------- helpers --

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  FOE_CHECK(bool(is), "cannot open ", path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  FOE_CHECK(bool(os), "cannot write ", path);
  os << text;
}

Tensor max_proj_z(const Tensor& vol) {
  const int64_t z = vol.dim(0), h = vol.dim(1), w = vol.dim(2);
  Tensor out = Tensor::zeros({h, w});
  for (int64_t zi = 0; zi < z; ++zi)
    for (int64_t i = 0; i < h * w; ++i)
      out.rdata()[i] = std::max(out.rdata()[i], vol.rdata()[zi * h * w + i]);
  return out;
}

Tensor max_proj_y(const Tensor& vol) {
  const int64_t z = vol.dim(0), h = vol.dim(1), w = vol.dim(2);
  Tensor out = Tensor::zeros({z, w});
  for (int64_t zi = 0; zi < z; ++zi)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out.at(zi, x) = std::max(out.at(zi, x), vol.at(zi, y, x));
  return out;
}

void write_pgm(const std::string& path, const Tensor& img) {
  FOE_CHECK(img.rank() == 2, "pgm preview expects a 2-D image");
  const int64_t h = img.dim(0), w = img.dim(1);
  const double lo = img.min();
  const double hi = std::max(img.max(), lo + 1e-30);
  std::ofstream os(path, std::ios::binary);
  FOE_CHECK(bool(os), "cannot write ", path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int64_t i = 0; i < h * w; ++i) {
    const double v = (img.rdata()[i] - lo) / (hi - lo);
    os.put(char(int(std::lround(v * 255.0))));
  }
}

// Optics geometry derived from a dataset row: camera pitch from the span,
// mask pitch at a fifth of it, planes spread evenly over the z span.
optics::OpticsConfig optics_from_dataset(const data::DatasetSpec& ds,
                                         double oversim) {
  optics::OpticsConfig cfg;
  cfg.camera_h = ds.camera_h;
  cfg.camera_w = ds.camera_w;
  cfg.camera_pixel_um = ds.span_y_um / double(ds.camera_h);
  cfg.mask_pixel_um = cfg.camera_pixel_um / 5.0;
  cfg.oversim_factor = oversim;
  const int64_t crop = ds.camera_h * 5;
  int64_t mask = int64_t(std::ceil(oversim * double(crop)));
  if (mask % 2 != 0) ++mask;
  cfg.mask_pixels = mask;
  cfg.z_planes_um.clear();
  for (int64_t i = 0; i < ds.z_planes; ++i) {
    const double frac =
        ds.z_planes == 1 ? 0.5 : double(i) / double(ds.z_planes - 1);
    cfg.z_planes_um.push_back(-0.5 * ds.span_z_um + ds.span_z_um * frac);
  }
  cfg.validate();
  return cfg;
}

int64_t preset_desk_divisor(const std::string& name) {
  if (name == "A") return 4;
  return 16;  // B, C, D
}

optics::OpticsConfig resolve_optics(const std::string& config_path,
                                    const std::string& preset,
                                    int64_t scale_divisor) {
  if (!config_path.empty())
    return optics::OpticsConfig::from_json(slurp(config_path));
  if (preset == "toy" || preset.empty()) return optics::OpticsConfig::toy();
  data::DatasetSpec ds = data::dataset_spec(preset);
  const int64_t divisor =
      scale_divisor > 0 ? scale_divisor : preset_desk_divisor(preset);
  if (divisor > 1) ds = data::desk_scale(ds, divisor);
  return optics_from_dataset(ds, 1.5);
}

Tensor resolve_phi(const std::string& phi_path, const std::string& init_name,
                   const optics::OpticsConfig& cfg) {
  if (!phi_path.empty()) {
    const Tensor phi = read_fot(phi_path);
    FOE_CHECK(phi.rank() == 2 && phi.dim(0) == cfg.mask_pixels &&
                  phi.dim(1) == cfg.mask_pixels && !phi.is_complex(),
              "phase mask in ", phi_path, " does not match the ",
              cfg.mask_pixels, "-pixel grid");
    return phi;
  }
  return optics::init_phase_mask(optics::mask_init_from_name(init_name), cfg);
}

std::vector<Tensor> resolve_dataset(const std::string& data_dir,
                                    int64_t phantom_count,
                                    const optics::OpticsConfig& cfg,
                                    uint64_t seed) {
  std::vector<Tensor> volumes;
  if (!data_dir.empty()) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(data_dir))
      if (entry.path().extension() == ".fot")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    FOE_CHECK(!files.empty(), "no .fot volumes found in ", data_dir);
    for (const auto& f : files) volumes.push_back(read_fot(f));
    return volumes;
  }
  for (int64_t i = 0; i < phantom_count; ++i) {
    data::PhantomParams p;
    p.dims = {cfg.z_count(), cfg.camera_h, cfg.camera_w};
    p.nucleus_count = std::max<int64_t>(3, cfg.camera_h / 4);
    p.radius_um_min = 1.2;
    p.radius_um_max = 2.2;
    p.background = 0.02;
    p.seed = splitmix64(seed + 977 * uint64_t(i + 1));
    volumes.push_back(data::generate_phantom(p));
  }
  return volumes;
}

// Peak-normalized expected image followed by rectified-Gaussian shot noise.
std::pair<Tensor, Tensor> simulate_camera(const Tensor& phi,
                                          const optics::OpticsConfig& cfg,
                                          const Tensor& volume,
                                          uint64_t seed) {
  FOE_CHECK(volume.rank() == 3 && volume.dim(0) == cfg.z_count(),
            "volume shape ", shape_str(volume.shape()), " does not provide ",
            cfg.z_count(), " planes");
  Tape tape;
  Var phi_var = tape.leaf(phi, false);
  const auto psf = optics::compute_psf_stack(phi_var, cfg);
  std::vector<Var> vol;
  const int64_t stride = volume.dim(1) * volume.dim(2);
  for (int64_t zi = 0; zi < cfg.z_count(); ++zi) {
    Tensor plane = Tensor::zeros({volume.dim(1), volume.dim(2)});
    std::copy(volume.rdata() + zi * stride, volume.rdata() + (zi + 1) * stride,
              plane.rdata());
    vol.push_back(tape.constant(plane));
  }
  Var mu = optics::image_volume(psf, vol);
  Var psf_energy{};
  for (const Var& plane : psf) {
    Var e = op::sum_all(plane);
    psf_energy = psf_energy.valid() ? op::add(psf_energy, e) : e;
  }
  Var camera = optics::camera_exposure(
      mu, psf_energy, cfg.photon_budget,
      optics::draw_noise(tape.value(mu).shape(), seed));
  Var flux = op::mul(mu, op::recip(psf_energy));
  return {tape.value(flux), tape.value(camera)};
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ------------------------------------------------------------- subcommands --

int cmd_psf(const std::string& config, const std::string& preset,
            int64_t divisor, const std::string& init,
            const std::string& phi_path, const std::string& out) {
  const optics::OpticsConfig cfg = resolve_optics(config, preset, divisor);
  const Tensor phi = resolve_phi(phi_path, init, cfg);
  log::info("computing ", cfg.z_count(), "-plane PSF stack on a ",
            cfg.mask_pixels, "px grid");
  const Tensor stack = optics::compute_psf_stack_tensor(phi, cfg);
  fs::create_directories(out);
  write_fot(out + "/psf.fot", stack);
  write_fot(out + "/phi.fot", phi);
  write_text(out + "/optics.json", cfg.to_json() + "\n");
  write_pgm(out + "/psf_xy.pgm", max_proj_z(stack));
  write_pgm(out + "/psf_xz.pgm", max_proj_y(stack));
  log::info("wrote ", out, "/psf.fot");
  return 0;
}

int cmd_simulate(const std::string& config, const std::string& preset,
                 int64_t divisor, const std::string& init,
                 const std::string& phi_path, const std::string& volume_path,
                 uint64_t seed, const std::string& out) {
  const optics::OpticsConfig cfg = resolve_optics(config, preset, divisor);
  const Tensor phi = resolve_phi(phi_path, init, cfg);
  FOE_CHECK(!volume_path.empty(), "simulate requires --volume");
  const Tensor volume = read_fot(volume_path);
  const auto [mu, camera] = simulate_camera(phi, cfg, volume, seed);
  fs::create_directories(out);
  write_fot(out + "/mu.fot", mu);
  write_fot(out + "/camera.fot", camera);
  write_pgm(out + "/camera.pgm", camera);
  log::info("wrote ", out, "/camera.fot");
  return 0;
}

int cmd_train(bool joint, const std::string& config, const std::string& preset,
              int64_t divisor, const std::string& train_path,
              const std::string& init, const std::string& phi_path,
              const std::string& net_name, const std::string& data_dir,
              int64_t phantoms, const CLI::App* sub, int64_t iters,
              uint64_t seed, int workers, const std::string& out) {
  const optics::OpticsConfig cfg = resolve_optics(config, preset, divisor);
  train::TrainConfig tc;
  if (!train_path.empty()) tc = train::TrainConfig::from_json(slurp(train_path));
  tc.mode = joint ? train::TrainMode::Joint : train::TrainMode::DecoderOnly;
  if (sub->count("--iters")) tc.iterations = iters;
  if (sub->count("--seed")) tc.seed = seed;
  if (sub->count("--workers")) tc.workers = workers;

  const Tensor phi = resolve_phi(phi_path, init, cfg);
  const auto dataset = resolve_dataset(data_dir, phantoms, cfg, tc.seed);
  const net::NetworkSpec spec =
      net::presets::by_name(net_name, cfg.camera_h, cfg.camera_w, 1);
  train::ReplicaStore replicas =
      train::ReplicaStore::make(spec, cfg.z_count(), tc.seed);

  log::info(joint ? "joint" : "decoder-only", " training: ", tc.iterations,
            " iterations, ", cfg.z_count(), " planes, ", tc.workers,
            " workers");
  data::AugmentOptions aug;
  aug.flip_z = aug.flip_y = true;
  aug.brightness = true;
  aug.background = true;
  const train::TrainResult result = train::train(
      tc, cfg, phi, replicas, dataset,
      [&aug](const Tensor& v, Rng& rng) { return data::augment(v, rng, aug); });

  fs::create_directories(out);
  train::save_replicas(out + "/checkpoint", replicas, &result.phi);
  write_text(out + "/optics.json", cfg.to_json() + "\n");
  write_text(out + "/train.json", tc.to_json() + "\n");
  train::write_metrics(out + "/metrics.ldjson", result.log);
  const Tensor stack = optics::compute_psf_stack_tensor(result.phi, cfg);
  write_pgm(out + "/psf_xy.pgm", max_proj_z(stack));
  write_pgm(out + "/psf_xz.pgm", max_proj_y(stack));
  log::info("final loss ", result.log.back().loss, "; checkpoint in ", out);
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& camera_path,
                    const std::string& out) {
  Tensor phi;
  train::ReplicaStore replicas = train::load_replicas(checkpoint, &phi);
  const Tensor camera = read_fot(camera_path);
  FOE_CHECK(camera.rank() == 2, "camera image must be [H, W]");
  const int64_t z = int64_t(replicas.nets.size());
  const int64_t h = camera.dim(0), w = camera.dim(1);
  Tensor volume = Tensor::zeros({z, h, w});
  for (int64_t zi = 0; zi < z; ++zi) {
    Tape tape;
    auto bound = replicas.nets[size_t(zi)].bind(tape, false);
    Var input = tape.constant(camera.reshaped({1, h, w}));
    Var out_var = replicas.nets[size_t(zi)].forward(tape, bound, input);
    const Tensor& plane = tape.value(out_var);
    std::copy(plane.rdata(), plane.rdata() + h * w,
              volume.rdata() + zi * h * w);
  }
  fs::create_directories(out);
  write_fot(out + "/volume.fot", volume);
  write_pgm(out + "/recon_xy.pgm", max_proj_z(volume));
  write_pgm(out + "/recon_xz.pgm", max_proj_y(volume));
  log::info("wrote ", out, "/volume.fot");
  return 0;
}

int cmd_eval(const std::string& truth_path, const std::string& recon_path,
             const std::string& out) {
  const Tensor truth = read_fot(truth_path);
  const Tensor recon = read_fot(recon_path);
  const data::Metrics m = data::metrics_eval(truth, recon);
  nlohmann::json j;
  if (std::isinf(m.psnr_db))
    j["psnr_db"] = "+inf";
  else
    j["psnr_db"] = m.psnr_db;
  j["ms_ssim"] = m.ms_ssim;
  j["l_hnmse"] = m.l_hnmse;
  const std::string text = j.dump(2);
  std::cout << text << "\n";
  if (!out.empty()) write_text(out, text + "\n");
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  bool ok = true;
  auto show = [&](const gradcheck::Report& r) {
    ok = ok && r.passed();
    std::cout << "gradcheck " << r.name << ": max_rel_err=" << r.max_rel_err
              << " over " << r.checked << " components "
              << (r.passed() ? "[ok]" : "[FAIL]") << "\n";
  };
  for (const auto& r : gradcheck::primitive_suite(seed)) show(r);
  show(gradcheck::pipeline_check(seed));
  if (!ok) throw NumericError("finite-difference checks failed");
  return 0;
}

int cmd_bench(int64_t size, int runs) {
  FOE_CHECK(size >= 16 && (size & (size - 1)) == 0,
            "bench size must be a power of two >= 16");
  Rng rng(2024);
  Tensor x = Tensor::zeros({1, size, size});
  for (int64_t i = 0; i < x.numel(); ++i) x.rdata()[i] = rng.uniform();
  Tensor wspec = Tensor::zeros({1, 1, 2 * size, 2 * size}, DType::C128);
  for (int64_t i = 0; i < wspec.numel(); ++i)
    wspec.cdata()[i] = cdouble(rng.uniform(-1, 1), rng.uniform(-1, 1));
  const int64_t k = size - 1;  // largest odd global kernel
  Tensor wdir = Tensor::zeros({1, 1, k, k});
  for (int64_t i = 0; i < wdir.numel(); ++i) wdir.rdata()[i] = rng.uniform();
  Tensor bias = Tensor::zeros({1});

  // Warmup both paths once.
  {
    Tape t;
    (void)t.value(net::fourier_conv2d(t.leaf(x, false), t.leaf(wspec, false),
                                      t.leaf(bias, false)));
  }
  double fourier_ms = 1e300;
  for (int r = 0; r < runs; ++r) {
    Tape t;
    const double t0 = now_ms();
    (void)t.value(net::fourier_conv2d(t.leaf(x, false), t.leaf(wspec, false),
                                      t.leaf(bias, false)));
    fourier_ms = std::min(fourier_ms, now_ms() - t0);
  }
  double direct_ms;
  {
    Tape t;
    const double t0 = now_ms();
    (void)t.value(op::conv2d(t.leaf(x, false), t.leaf(wdir, false),
                             t.leaf(bias, false)));
    direct_ms = now_ms() - t0;
  }
  std::cout << "input " << size << "x" << size << ", global kernel\n";
  std::cout << "  fourier conv : " << fourier_ms << " ms\n";
  std::cout << "  direct conv  : " << direct_ms << " ms (" << k << "x" << k
            << " spatial kernel)\n";
  std::cout << "  speedup      : " << direct_ms / fourier_ms << "x\n";
  return 0;
}

int cmd_phantom(const std::string& config, const std::string& dims_csv,
                int64_t count, uint64_t seed, const CLI::App* sub,
                const std::string& out) {
  data::PhantomParams p;
  if (!config.empty()) p = data::PhantomParams::from_json(slurp(config));
  if (sub->count("--dims")) {
    Shape dims;
    std::stringstream ss(dims_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      dims.push_back(std::stoll(item));
    FOE_CHECK(dims.size() == 3, "--dims expects z,y,x");
    p.dims = dims;
  }
  if (sub->count("--count")) p.nucleus_count = count;
  if (sub->count("--seed")) p.seed = seed;
  const Tensor v = data::generate_phantom(p);
  fs::create_directories(out);
  write_fot(out + "/volume.fot", v);
  write_text(out + "/phantom.json", p.to_json() + "\n");
  write_pgm(out + "/volume_xy.pgm", max_proj_z(v));
  log::info("wrote ", out, "/volume.fot");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "foe: differentiable 4f snapshot-microscope simulation and "
      "Fourier-domain reconstruction networks"};
  app.require_subcommand(1);

  std::string config, preset = "toy", init = "zeros", phi_path, out = "out";
  std::string volume_path, truth_path, recon_path, checkpoint, camera_path;
  std::string train_path, net_name = "fouriernet2d-mini", data_dir, dims_csv;
  int64_t divisor = 0, iters = 300, bench_size = 256, phantoms = 8, count = 10;
  uint64_t seed = 1;
  int workers = 1, runs = 3;

  auto add_optics = [&](CLI::App* sub) {
    sub->add_option("--config", config, "optics config JSON path");
    sub->add_option("--preset", preset,
                    "geometry preset: toy, A, B, C, or D (desk-scaled)");
    sub->add_option("--scale-divisor", divisor,
                    "override the preset desk-scale divisor (1 = full scale)");
  };

  CLI::App* psf = app.add_subcommand("psf", "compute and save a PSF stack");
  add_optics(psf);
  psf->add_option("--init", init, "phase mask init: zeros, pencils_hex, helix");
  psf->add_option("--phi", phi_path, "phase mask FOT1 file");
  psf->add_option("--out", out, "output directory");

  CLI::App* sim = app.add_subcommand("simulate",
                                     "image a volume into a noisy camera frame");
  add_optics(sim);
  sim->add_option("--init", init, "phase mask init");
  sim->add_option("--phi", phi_path, "phase mask FOT1 file");
  sim->add_option("--volume", volume_path, "volume FOT1 file")->required();
  sim->add_option("--seed", seed, "noise seed");
  sim->add_option("--out", out, "output directory");

  auto add_train = [&](CLI::App* sub) {
    add_optics(sub);
    sub->add_option("--train", train_path, "train config JSON path");
    sub->add_option("--init", init, "phase mask init");
    sub->add_option("--phi", phi_path, "phase mask FOT1 file");
    sub->add_option("--net", net_name, "reconstruction network preset");
    sub->add_option("--data", data_dir, "directory of volume .fot files");
    sub->add_option("--phantoms", phantoms, "phantom count when no --data");
    sub->add_option("--iters", iters, "iteration count");
    sub->add_option("--seed", seed, "training seed");
    sub->add_option("--workers", workers, "shard worker count");
    sub->add_option("--out", out, "output directory");
  };
  CLI::App* tenc = app.add_subcommand(
      "train-encoder", "jointly train the phase mask and planewise decoders");
  add_train(tenc);
  CLI::App* tdec = app.add_subcommand(
      "train-decoder", "train planewise decoders for a fixed phase mask");
  add_train(tdec);

  CLI::App* rec = app.add_subcommand("reconstruct",
                                     "reconstruct a volume from a camera frame");
  rec->add_option("--checkpoint", checkpoint, "replica checkpoint directory")
      ->required();
  rec->add_option("--camera", camera_path, "camera FOT1 file")->required();
  rec->add_option("--out", out, "output directory");

  CLI::App* ev = app.add_subcommand("eval", "image quality metrics");
  ev->add_option("--truth", truth_path, "ground truth FOT1 file")->required();
  ev->add_option("--recon", recon_path, "reconstruction FOT1 file")->required();
  ev->add_option("--out", out, "metrics JSON output path")->default_val("");

  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "finite-difference gradient suite");
  gc->add_option("--seed", seed, "probe seed");

  CLI::App* bench = app.add_subcommand(
      "bench", "Fourier vs direct global convolution timings");
  bench->add_option("--size", bench_size, "input extent");
  bench->add_option("--runs", runs, "timing repetitions");

  CLI::App* ph = app.add_subcommand("phantom", "emit a seeded phantom volume");
  ph->add_option("--config", config, "phantom params JSON path");
  ph->add_option("--dims", dims_csv, "volume extents z,y,x");
  ph->add_option("--count", count, "nucleus count");
  ph->add_option("--seed", seed, "placement seed");
  ph->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
    if (psf->parsed())
      return cmd_psf(config, preset, divisor, init, phi_path, out);
    if (sim->parsed())
      return cmd_simulate(config, preset, divisor, init, phi_path, volume_path,
                          seed, out);
    if (tenc->parsed())
      return cmd_train(true, config, preset, divisor, train_path, init,
                       phi_path, net_name, data_dir, phantoms, tenc, iters,
                       seed, workers, out);
    if (tdec->parsed())
      return cmd_train(false, config, preset, divisor, train_path, init,
                       phi_path, net_name, data_dir, phantoms, tdec, iters,
                       seed, workers, out);
    if (rec->parsed()) return cmd_reconstruct(checkpoint, camera_path, out);
    if (ev->parsed()) return cmd_eval(truth_path, recon_path, out);
    if (gc->parsed()) return cmd_gradcheck(seed);
    if (bench->parsed()) return cmd_bench(bench_size, runs);
    if (ph->parsed()) return cmd_phantom(config, dims_csv, count, seed, ph, out);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const NumericError& e) {
    log::error(e.what());
    return 2;
  } catch (const Error& e) {
    log::error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
}
