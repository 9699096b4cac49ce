#include "foe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "foe/io.hpp"
#include "foe/log.hpp"

namespace foe::train {

namespace op = foe::ops;

Var high_pass(Var v, double sigma_px) {
  return op::sub(v, op::gaussian_blur2d(v, sigma_px));
}

namespace {

Var apply_highpass(Var v, const LossConfig& cfg) {
  return cfg.highpass == HighPassKind::Gaussian
             ? high_pass(v, cfg.highpass_sigma_px)
             : v;
}

double mean_sq(const Tensor& t) {
  double s = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) s += t.rdata()[i] * t.rdata()[i];
  return s / double(t.numel());
}

}  // namespace

LossNormalizers loss_normalizers(const Tensor& v, const LossConfig& cfg) {
  LossNormalizers n;
  n.nmse_denom = std::max(mean_sq(v), cfg.eps_norm);
  if (cfg.highpass == HighPassKind::Identity) {
    n.hnmse_denom = n.nmse_denom;
    return n;
  }
  Tape t;
  const Tensor hv = t.value(high_pass(t.constant(v), cfg.highpass_sigma_px));
  n.hnmse_denom = std::max(mean_sq(hv), cfg.eps_norm);
  return n;
}

Var loss_with_normalizers(Var vhat, const Tensor& v, const LossConfig& cfg,
                          const LossNormalizers& n) {
  Tape& t = *vhat.tape;
  FOE_CHECK(same_shape(t.value(vhat).shape(), v.shape()),
            "loss: shape mismatch ", shape_str(t.value(vhat).shape()), " vs ",
            shape_str(v.shape()));
  Var vc = t.constant(v);
  Var diff_h = op::sub(apply_highpass(vc, cfg), apply_highpass(vhat, cfg));
  Var term_h = op::scale(op::mean_all(op::square(diff_h)), 1.0 / n.hnmse_denom);
  Var diff = op::sub(vc, vhat);
  Var term_n = op::scale(op::mean_all(op::square(diff)),
                         cfg.beta / n.nmse_denom);
  return op::add(term_h, term_n);
}

Var loss(Var vhat, const Tensor& v, const LossConfig& cfg) {
  return loss_with_normalizers(vhat, v, cfg, loss_normalizers(v, cfg));
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState st;
  for (const Tensor& p : params) {
    const size_t n = size_t(p.numel()) * (p.is_complex() ? 2 : 1);
    st.m.emplace_back(n, 0.0);
    st.v.emplace_back(n, 0.0);
  }
  return st;
}

namespace {

// Raw real view of a tensor's storage (complex as re,im pairs).
double* raw_data(Tensor& t, int64_t& n) {
  if (t.is_complex()) {
    n = 2 * t.numel();
    return reinterpret_cast<double*>(t.cdata());
  }
  n = t.numel();
  return t.rdata();
}

const double* raw_data(const Tensor& t, int64_t& n) {
  if (t.is_complex()) {
    n = 2 * t.numel();
    return reinterpret_cast<const double*>(t.cdata());
  }
  n = t.numel();
  return t.rdata();
}

}  // namespace

void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg) {
  FOE_CHECK(params.size() == grads.size() && params.size() == state.m.size(),
            "adam_step: parameter/gradient/state size mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    int64_t np = 0, ng = 0;
    double* p = raw_data(*params[i], np);
    const double* g = raw_data(grads[i], ng);
    FOE_CHECK(np == ng, "adam_step: gradient ", i, " has ", ng,
              " components, parameter has ", np);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (int64_t k = 0; k < np; ++k) {
      const double gk = g[k];
      FOE_NUMERIC_CHECK(std::isfinite(gk), "NaN gradient in parameter ", i);
      m[size_t(k)] = cfg.beta1 * m[size_t(k)] + (1.0 - cfg.beta1) * gk;
      v[size_t(k)] = cfg.beta2 * v[size_t(k)] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[size_t(k)] / bc1;
      const double vhat = v[size_t(k)] / bc2;
      p[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

ShardPlan select_planes(const std::vector<int64_t>& all_z, int64_t n_grad,
                        int64_t n_recon, int worker_count, Rng& rng) {
  const int64_t z = int64_t(all_z.size());
  FOE_CHECK(z > 0, "select_planes: empty plane list");
  FOE_CHECK(worker_count >= 1, "select_planes: need at least one worker");
  FOE_CHECK(n_grad >= 0 && n_grad <= z, "select_planes: n_grad ", n_grad,
            " out of range [0, ", z, "]");
  FOE_CHECK(n_recon >= 1 && n_recon <= z, "select_planes: n_recon ", n_recon,
            " out of range [1, ", z, "]");

  ShardPlan plan;
  plan.worker_count = worker_count;

  std::vector<int64_t> shuffled = all_z;
  rng.shuffle(shuffled);
  plan.z_gradient.assign(shuffled.begin(), shuffled.begin() + n_grad);
  plan.z_no_gradient.assign(shuffled.begin() + n_grad, shuffled.end());
  std::sort(plan.z_gradient.begin(), plan.z_gradient.end());
  std::sort(plan.z_no_gradient.begin(), plan.z_no_gradient.end());

  // Independent draw for the reconstruction set, rounded down so every
  // worker receives an equally sized chunk.
  int64_t n_rec = (n_recon / worker_count) * worker_count;
  FOE_CHECK(n_rec >= 1, "select_planes: n_recon ", n_recon,
            " leaves some of the ", worker_count, " workers empty");
  std::vector<int64_t> shuffled2 = all_z;
  rng.shuffle(shuffled2);
  plan.z_reconstruct.assign(shuffled2.begin(), shuffled2.begin() + n_rec);
  std::sort(plan.z_reconstruct.begin(), plan.z_reconstruct.end());

  auto round_robin = [worker_count](const std::vector<int64_t>& xs) {
    std::vector<std::vector<int64_t>> chunks;
    const int64_t used = std::min<int64_t>(worker_count, int64_t(xs.size()));
    chunks.resize(size_t(used));
    for (size_t i = 0; i < xs.size(); ++i)
      chunks[i % size_t(used)].push_back(xs[i]);
    return chunks;
  };
  plan.grad_chunks = round_robin(plan.z_gradient);
  plan.no_grad_chunks = round_robin(plan.z_no_gradient);
  plan.recon_chunks = round_robin(plan.z_reconstruct);
  return plan;
}

Var sharded_image(const std::vector<std::vector<Var>>& psf_chunks,
                  const std::vector<std::vector<Var>>& volume_chunks) {
  FOE_CHECK(psf_chunks.size() == volume_chunks.size(),
            "sharded_image: chunk counts differ");
  FOE_CHECK(!psf_chunks.empty(), "sharded_image: no chunks");
  Var total{};
  bool first = true;
  for (size_t c = 0; c < psf_chunks.size(); ++c) {
    FOE_CHECK(psf_chunks[c].size() == volume_chunks[c].size(),
              "sharded_image: chunk ", c, " is misaligned");
    if (psf_chunks[c].empty()) continue;
    Var partial = optics::image_volume(psf_chunks[c], volume_chunks[c]);
    total = first ? partial : op::add(total, partial);
    first = false;
  }
  FOE_CHECK(!first, "sharded_image: all chunks empty");
  return total;
}

Var sharded_reconstruct_loss(
    const std::vector<std::vector<Var>>& vhat_chunks,
    const std::vector<std::vector<Tensor>>& v_chunks,
    const LossNormalizers& normalizers, const LossConfig& cfg) {
  FOE_CHECK(vhat_chunks.size() == v_chunks.size(),
            "sharded loss: chunk counts differ");
  FOE_CHECK(!vhat_chunks.empty(), "sharded loss: no chunks");
  FOE_CHECK(normalizers.hnmse_denom > 0 && normalizers.nmse_denom > 0,
            "sharded loss: missing normalizers");
  const size_t chunk_size = vhat_chunks[0].size();
  Var acc{};
  for (size_t c = 0; c < vhat_chunks.size(); ++c) {
    FOE_CHECK(vhat_chunks[c].size() == v_chunks[c].size(),
              "sharded loss: chunk ", c, " is misaligned");
    FOE_CHECK(vhat_chunks[c].size() == chunk_size,
              "sharded loss: chunks must be equal-sized");
    FOE_CHECK(!vhat_chunks[c].empty(), "sharded loss: empty chunk");
    Tape& t = *vhat_chunks[c][0].tape;

    std::vector<Var> vhat_planes;
    for (const Var& p : vhat_chunks[c]) {
      const Shape& s = t.value(p).shape();
      vhat_planes.push_back(op::reshape(p, {1, s[s.size() - 2], s.back()}));
    }
    Var vhat = op::concat0(vhat_planes);
    const Shape& ps = v_chunks[c][0].shape();
    Tensor v = Tensor::zeros({int64_t(v_chunks[c].size()), ps[0], ps[1]});
    int64_t off = 0;
    for (const Tensor& plane : v_chunks[c]) {
      std::copy(plane.rdata(), plane.rdata() + plane.numel(), v.rdata() + off);
      off += plane.numel();
    }

    Var vc = t.constant(v);
    Var diff_h = op::sub(apply_highpass(vc, cfg), apply_highpass(vhat, cfg));
    Var term_h = op::scale(op::mean_all(op::square(diff_h)),
                           1.0 / normalizers.hnmse_denom);
    Var diff = op::sub(vc, vhat);
    Var term_n = op::scale(op::mean_all(op::square(diff)),
                           cfg.beta / normalizers.nmse_denom);
    Var chunk_loss = op::add(term_h, term_n);
    acc = c == 0 ? chunk_loss : op::add(acc, chunk_loss);
  }
  return op::scale(acc, 1.0 / double(vhat_chunks.size()));
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = mode == TrainMode::Joint ? "joint" : "decoder_only";
  j["lr_theta"] = lr_theta;
  j["lr_phi"] = lr_phi;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["iterations"] = iterations;
  j["seed"] = seed;
  j["workers"] = workers;
  j["n_grad"] = n_grad;
  j["n_recon"] = n_recon;
  j["loss_beta"] = loss.beta;
  j["highpass_sigma_px"] = loss.highpass_sigma_px;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("train config parse error: ", e.what()));
  }
  TrainConfig cfg;
  const std::string mode = j.value("mode", "decoder_only");
  if (mode == "joint")
    cfg.mode = TrainMode::Joint;
  else if (mode == "decoder_only")
    cfg.mode = TrainMode::DecoderOnly;
  else
    throw ValidationError("unknown train mode: " + mode);
  cfg.lr_theta = j.value("lr_theta", 1e-4);
  cfg.lr_phi = j.value("lr_phi", 1e-2);
  cfg.beta1 = j.value("beta1", 0.9);
  cfg.beta2 = j.value("beta2", 0.999);
  cfg.adam_eps = j.value("adam_eps", 1e-8);
  cfg.iterations = j.value("iterations", int64_t(300));
  cfg.seed = j.value("seed", uint64_t(1));
  cfg.workers = j.value("workers", 1);
  cfg.n_grad = j.value("n_grad", int64_t(-1));
  cfg.n_recon = j.value("n_recon", int64_t(-1));
  cfg.loss.beta = j.value("loss_beta", 0.1);
  cfg.loss.highpass_sigma_px = j.value("highpass_sigma_px", 2.0);
  return cfg;
}

void write_metrics(const std::string& path,
                   const std::vector<MetricsRecord>& log) {
  std::ofstream os(path);
  FOE_CHECK(bool(os), "cannot write metrics log ", path);
  for (const MetricsRecord& r : log) {
    nlohmann::json j;
    j["iter"] = r.iter;
    j["loss"] = r.loss;
    j["l_hnmse"] = r.l_hnmse;
    j["l_nmse"] = r.l_nmse;
    j["wall_ms"] = r.wall_ms;
    os << j.dump() << "\n";
  }
}

ReplicaStore ReplicaStore::make(const net::NetworkSpec& spec, int64_t planes,
                                uint64_t seed) {
  ReplicaStore store;
  store.spec = spec;
  for (int64_t p = 0; p < planes; ++p) {
    store.nets.push_back(net::Network::build(spec, splitmix64(seed + 17 * uint64_t(p + 1))));
    std::vector<Tensor> values;
    for (const auto& param : store.nets.back().params())
      values.push_back(param.value);
    store.states.push_back(AdamState::init(values));
  }
  return store;
}

void save_replicas(const std::string& dir, const ReplicaStore& store,
                   const Tensor* phi) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "foe-replicas-v1";
  manifest["planes"] = store.nets.size();
  manifest["network"] = nlohmann::json::parse(store.spec.to_json());
  for (size_t p = 0; p < store.nets.size(); ++p)
    net::save_checkpoint(dir + "/plane_" + std::to_string(p), store.nets[p],
                         nullptr);
  if (phi != nullptr) {
    write_fot(dir + "/phi.fot", *phi);
    manifest["phi"] = "phi.fot";
  }
  std::ofstream os(dir + "/manifest.json");
  FOE_CHECK(bool(os), "cannot write replica manifest in ", dir);
  os << manifest.dump(2) << "\n";
}

ReplicaStore load_replicas(const std::string& dir, Tensor* phi) {
  std::ifstream is(dir + "/manifest.json");
  FOE_CHECK(bool(is), "cannot read replica manifest in ", dir);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("replica manifest parse error: ", e.what()));
  }
  FOE_CHECK(manifest.value("format", "") == "foe-replicas-v1",
            "unsupported replica checkpoint format");
  const size_t planes = manifest.at("planes").get<size_t>();
  ReplicaStore store;
  store.spec = net::NetworkSpec::from_json(manifest.at("network").dump());
  for (size_t p = 0; p < planes; ++p) {
    store.nets.push_back(
        net::load_checkpoint(dir + "/plane_" + std::to_string(p)));
    std::vector<Tensor> values;
    for (const auto& param : store.nets.back().params())
      values.push_back(param.value);
    store.states.push_back(AdamState::init(values));
  }
  if (phi != nullptr && manifest.contains("phi"))
    *phi = read_fot(dir + "/" + manifest.at("phi").get<std::string>());
  return store;
}

namespace {

struct IterStreams {
  Rng plan;
  Rng augment;
  Rng noise;
  Rng sample;
};

IterStreams iter_streams(uint64_t seed, int64_t iter) {
  const uint64_t base = splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * uint64_t(iter + 1)));
  return IterStreams{Rng(splitmix64(base ^ 1)), Rng(splitmix64(base ^ 2)),
                     Rng(splitmix64(base ^ 3)), Rng(splitmix64(base ^ 4))};
}

std::vector<Tensor> volume_planes(const Tensor& v,
                                  const std::vector<int64_t>& planes) {
  std::vector<Tensor> out;
  const int64_t zy = v.dim(1), zx = v.dim(2);
  for (int64_t z : planes) {
    Tensor plane = Tensor::zeros({zy, zx});
    std::copy(v.rdata() + z * zy * zx, v.rdata() + (z + 1) * zy * zx,
              plane.rdata());
    out.push_back(std::move(plane));
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const optics::OpticsConfig& optics_cfg,
                  const Tensor& phi_init, ReplicaStore& replicas,
                  const std::vector<Tensor>& dataset, const AugmentFn& augment) {
  optics_cfg.validate();
  FOE_CHECK(!dataset.empty(), "train: empty dataset");
  const int64_t z = optics_cfg.z_count();
  FOE_CHECK(int64_t(replicas.nets.size()) == z, "train: ", replicas.nets.size(),
            " replicas for ", z, " planes");
  for (const Tensor& v : dataset)
    FOE_CHECK(v.rank() == 3 && v.dim(0) == z, "train: dataset volume shape ",
              shape_str(v.shape()), " does not match ", z, " planes");

  std::vector<int64_t> all_z(static_cast<size_t>(z));
  std::iota(all_z.begin(), all_z.end(), 0);
  const int64_t n_grad_planes =
      cfg.n_grad < 0 ? z : std::min<int64_t>(cfg.n_grad, z);
  const int64_t n_recon_planes =
      cfg.n_recon < 0 ? z : std::min<int64_t>(cfg.n_recon, z);

  Tensor phi = phi_init;
  AdamState phi_state = AdamState::init({phi});
  const AdamConfig phi_adam{cfg.lr_phi, cfg.beta1, cfg.beta2, cfg.adam_eps};
  const AdamConfig theta_adam{cfg.lr_theta, cfg.beta1, cfg.beta2, cfg.adam_eps};

  // Decoder-only mode precomputes the PSF stack once without gradients.
  std::vector<Tensor> fixed_psf;
  if (cfg.mode == TrainMode::DecoderOnly) {
    const Tensor stack = optics::compute_psf_stack_tensor(phi, optics_cfg);
    const int64_t stride = optics_cfg.camera_h * optics_cfg.camera_w;
    for (int64_t zi = 0; zi < z; ++zi) {
      Tensor plane = Tensor::zeros({optics_cfg.camera_h, optics_cfg.camera_w});
      std::copy(stack.rdata() + zi * stride, stack.rdata() + (zi + 1) * stride,
                plane.rdata());
      fixed_psf.push_back(std::move(plane));
    }
  }

  TrainResult result;
  for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    IterStreams streams = iter_streams(cfg.seed, iter);

    Tensor volume =
        dataset[size_t(streams.sample.uniform_index(dataset.size()))];
    if (augment) volume = augment(volume, streams.augment);

    ShardPlan plan =
        select_planes(all_z, cfg.mode == TrainMode::Joint ? n_grad_planes : 0,
                      n_recon_planes, cfg.workers, streams.plan);

    Tape tape;
    Var phi_var = tape.leaf(phi, cfg.mode == TrainMode::Joint);

    // Imaging: gradient-tracked PSF planes for z_gradient, detached for the
    // remainder; in decoder mode all planes come from the fixed stack.
    Var mu{};
    Var psf_energy{};
    {
      std::vector<std::vector<Var>> psf_chunks, vol_chunks;
      auto add_chunks = [&](const std::vector<std::vector<int64_t>>& chunks,
                            bool with_grad) {
        for (const auto& chunk : chunks) {
          if (chunk.empty()) continue;
          std::vector<Var> psf_planes;
          if (cfg.mode == TrainMode::DecoderOnly) {
            for (int64_t zi : chunk)
              psf_planes.push_back(tape.constant(fixed_psf[size_t(zi)]));
          } else if (with_grad) {
            psf_planes = optics::compute_psf_stack(phi_var, optics_cfg, chunk);
          } else {
            Var phi_frozen = tape.detach(phi_var);
            psf_planes =
                optics::compute_psf_stack(phi_frozen, optics_cfg, chunk);
          }
          for (const Var& plane : psf_planes) {
            Var e = op::sum_all(plane);
            psf_energy = psf_energy.valid() ? op::add(psf_energy, e) : e;
          }
          std::vector<Var> vp;
          for (const Tensor& plane : volume_planes(volume, chunk))
            vp.push_back(tape.constant(plane));
          psf_chunks.push_back(std::move(psf_planes));
          vol_chunks.push_back(std::move(vp));
        }
      };
      add_chunks(plan.grad_chunks, true);
      add_chunks(plan.no_grad_chunks, false);
      mu = sharded_image(psf_chunks, vol_chunks);
    }

    // Flux-unit camera with shot noise applied at the configured photon
    // scale, after the full summation over planes.
    Var camera = optics::camera_exposure(
        mu, psf_energy, optics_cfg.photon_budget,
        optics::draw_noise(tape.value(mu).shape(), streams.noise.next_u64()));

    // Reconstruction per selected plane with that plane's replica.
    const auto recon_truth = volume_planes(volume, plan.z_reconstruct);
    Tensor truth_stack = Tensor::zeros(
        {int64_t(recon_truth.size()), optics_cfg.camera_h, optics_cfg.camera_w});
    {
      FOE_CHECK(recon_truth.empty() ||
                    same_shape(recon_truth[0].shape(),
                               {optics_cfg.camera_h, optics_cfg.camera_w}),
                "train: volume planes must match the camera grid");
      int64_t off = 0;
      for (const Tensor& plane : recon_truth) {
        std::copy(plane.rdata(), plane.rdata() + plane.numel(),
                  truth_stack.rdata() + off);
        off += plane.numel();
      }
    }
    const LossNormalizers normalizers = loss_normalizers(truth_stack, cfg.loss);

    Var cam_input = op::reshape(camera, {1, optics_cfg.camera_h,
                                         optics_cfg.camera_w});
    std::vector<std::vector<Var>> vhat_chunks;
    std::vector<std::vector<Tensor>> v_chunks;
    std::vector<std::pair<int64_t, net::Network::Bound>> bound_replicas;
    for (const auto& chunk : plan.recon_chunks) {
      std::vector<Var> vhat_planes;
      std::vector<Tensor> v_planes;
      for (int64_t zi : chunk) {
        net::Network& net = replicas.nets[size_t(zi)];
        auto bound = net.bind(tape, true);
        Var out = net.forward(tape, bound, cam_input);
        const Shape& os = tape.value(out).shape();
        vhat_planes.push_back(
            op::reshape(out, {os[os.size() - 2], os.back()}));
        v_planes.push_back(volume_planes(volume, {zi})[0]);
        bound_replicas.emplace_back(zi, std::move(bound));
      }
      vhat_chunks.push_back(std::move(vhat_planes));
      v_chunks.push_back(std::move(v_planes));
    }
    Var total_loss =
        sharded_reconstruct_loss(vhat_chunks, v_chunks, normalizers, cfg.loss);

    const double loss_value = tape.value(total_loss).item();
    FOE_NUMERIC_CHECK(std::isfinite(loss_value), "NaN loss at iteration ",
                      iter);

    // Split metrics recomputed from the same vhat values.
    double l_hnmse = 0.0, l_nmse = 0.0;
    {
      LossConfig nm = cfg.loss;
      for (size_t c = 0; c < vhat_chunks.size(); ++c) {
        Tensor vhat_stack = optics::stack_planes(tape, vhat_chunks[c]);
        Tensor v_stack = Tensor::zeros(vhat_stack.shape());
        int64_t off = 0;
        for (const Tensor& plane : v_chunks[c]) {
          std::copy(plane.rdata(), plane.rdata() + plane.numel(),
                    v_stack.rdata() + off);
          off += plane.numel();
        }
        Tape scratch;
        Var vh = scratch.constant(vhat_stack);
        Var vc = scratch.constant(v_stack);
        Var dh = op::sub(apply_highpass(vc, nm), apply_highpass(vh, nm));
        l_hnmse += scratch.value(op::mean_all(op::square(dh))).item() /
                   normalizers.hnmse_denom;
        Var dn = op::sub(vc, vh);
        l_nmse += scratch.value(op::mean_all(op::square(dn))).item() /
                  normalizers.nmse_denom;
      }
      l_hnmse /= double(vhat_chunks.size());
      l_nmse /= double(vhat_chunks.size());
    }

    tape.backward(total_loss);

    // Updates: each participating replica, then the phase mask.
    for (auto& [zi, bound] : bound_replicas) {
      net::Network& net = replicas.nets[size_t(zi)];
      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      for (size_t pi = 0; pi < net.params().size(); ++pi) {
        params.push_back(&net.params()[pi].value);
        grads.push_back(tape.has_grad(bound.vars[pi])
                            ? tape.grad(bound.vars[pi])
                            : Tensor::zeros(net.params()[pi].value.shape(),
                                            net.params()[pi].value.dtype()));
      }
      adam_step(params, grads, replicas.states[size_t(zi)], theta_adam);
    }
    if (cfg.mode == TrainMode::Joint && tape.has_grad(phi_var)) {
      std::vector<Tensor*> params{&phi};
      std::vector<Tensor> grads{tape.grad(phi_var)};
      adam_step(params, grads, phi_state, phi_adam);
    }

    const auto t1 = std::chrono::steady_clock::now();
    MetricsRecord rec;
    rec.iter = iter;
    rec.loss = loss_value;
    rec.l_hnmse = l_hnmse;
    rec.l_nmse = l_nmse;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.log.push_back(rec);
    if (iter % 50 == 0)
      log::debug("iter ", iter, " loss ", loss_value);
  }

  result.phi = phi;
  return result;
}

}  // namespace foe::train
