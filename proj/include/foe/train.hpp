#pragma once

#include <functional>
#include <string>
#include <vector>

#include "foe/net.hpp"
#include "foe/optics.hpp"
#include "foe/ops.hpp"
#include "foe/rng.hpp"

namespace foe::train {

// The Identity kind is a test hook that turns L into (1 + beta) * NMSE.
enum class HighPassKind { Gaussian, Identity };

struct LossConfig {
  double beta = 0.1;
  double highpass_sigma_px = 2.0;
  double eps_norm = 1e-12;
  HighPassKind highpass = HighPassKind::Gaussian;
};

// H(v) = v - G_sigma(v) applied per 2-D plane over the last two axes.
Var high_pass(Var v, double sigma_px);

struct LossNormalizers {
  double hnmse_denom = 1.0;  // E[H(v)^2]
  double nmse_denom = 1.0;   // E[v^2]
};

LossNormalizers loss_normalizers(const Tensor& v, const LossConfig& cfg);

// L = E[(H(v)-H(vhat))^2]/E[H(v)^2] + beta E[(v-vhat)^2]/E[v^2].
// Differentiable in vhat; v is the ground-truth constant.
Var loss(Var vhat, const Tensor& v, const LossConfig& cfg);
Var loss_with_normalizers(Var vhat, const Tensor& v, const LossConfig& cfg,
                          const LossNormalizers& n);

// ---- Adam ------------------------------------------------------------------
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moment buffers over the raw real storage of each
// parameter (complex parameters update channelwise).
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t t = 0;

  static AdamState init(const std::vector<Tensor>& params);
};

// One bias-corrected step; throws NumericError on NaN gradients.
void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

// ---- plane sharding ----------------------------------------------------------
struct ShardPlan {
  int worker_count = 1;
  std::vector<int64_t> z_gradient;
  std::vector<int64_t> z_no_gradient;
  std::vector<int64_t> z_reconstruct;
  std::vector<std::vector<int64_t>> grad_chunks;     // per worker, may be fewer
  std::vector<std::vector<int64_t>> no_grad_chunks;
  std::vector<std::vector<int64_t>> recon_chunks;    // equal sizes
};

// Uniform sample without replacement for the gradient set; the remainder is
// imaged gradient-free; an independent draw picks the reconstruction set.
// n_recon is rounded down to a multiple of worker_count so chunk losses
// average exactly to the unsharded loss.
ShardPlan select_planes(const std::vector<int64_t>& all_z, int64_t n_grad,
                        int64_t n_recon, int worker_count, Rng& rng);

// Partial planewise images per chunk, summed in ascending chunk order.
Var sharded_image(const std::vector<std::vector<Var>>& psf_chunks,
                  const std::vector<std::vector<Var>>& volume_chunks);

// Mean over per-chunk normalized losses with shared normalizers. Chunks must
// be equal-sized. vhat/v chunks hold per-plane [H, W] entries.
Var sharded_reconstruct_loss(
    const std::vector<std::vector<Var>>& vhat_chunks,
    const std::vector<std::vector<Tensor>>& v_chunks,
    const LossNormalizers& normalizers, const LossConfig& cfg);

// ---- training loops ----------------------------------------------------------
enum class TrainMode { Joint, DecoderOnly };

struct TrainConfig {
  TrainMode mode = TrainMode::DecoderOnly;
  double lr_theta = 1e-4;
  double lr_phi = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t iterations = 300;
  uint64_t seed = 1;
  int workers = 1;
  int64_t n_grad = -1;   // planes imaged with gradients per step; -1 = all
  int64_t n_recon = -1;  // planes reconstructed per step; -1 = all
  LossConfig loss;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct MetricsRecord {
  int64_t iter = 0;
  double loss = 0.0;
  double l_hnmse = 0.0;
  double l_nmse = 0.0;
  double wall_ms = 0.0;
};

void write_metrics(const std::string& path,
                   const std::vector<MetricsRecord>& log);

// One reconstruction network per depth plane, parameters hosted centrally
// and bound onto each iteration's tape.
struct ReplicaStore {
  net::NetworkSpec spec;
  std::vector<net::Network> nets;
  std::vector<AdamState> states;

  static ReplicaStore make(const net::NetworkSpec& spec, int64_t planes,
                           uint64_t seed);
};

// Checkpoint directory holding one per-plane network checkpoint plus the
// phase mask.
void save_replicas(const std::string& dir, const ReplicaStore& store,
                   const Tensor* phi = nullptr);
ReplicaStore load_replicas(const std::string& dir, Tensor* phi = nullptr);

using AugmentFn = std::function<Tensor(const Tensor&, Rng&)>;

struct TrainResult {
  std::vector<MetricsRecord> log;
  Tensor phi;
};

// Joint (phase mask + replicas) or decoder-only training over a dataset of
// [Z, Y, X] volumes. The decoder-only mode precomputes the PSF stack once
// without gradients.
TrainResult train(const TrainConfig& cfg, const optics::OpticsConfig& optics_cfg,
                  const Tensor& phi_init, ReplicaStore& replicas,
                  const std::vector<Tensor>& dataset,
                  const AugmentFn& augment = nullptr);

}  // namespace foe::train
