#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "foe/data.hpp"
#include "foe/train.hpp"
#include "foe_ref/reference.hpp"
#include "testutil.hpp"

using namespace foe;
using namespace foe::train;
namespace op = foe::ops;
using test::max_abs_diff;
using test::random_real;

namespace {

optics::OpticsConfig train_toy_config(int64_t z_planes = 4) {
  optics::OpticsConfig cfg;
  cfg.mask_pixels = 48;
  cfg.mask_pixel_um = 0.325;
  cfg.camera_h = cfg.camera_w = 16;
  cfg.camera_pixel_um = 0.65;
  cfg.taper_width_px = 3.0;
  cfg.oversim_factor = 1.5;
  cfg.photon_budget = 2000.0;
  cfg.z_planes_um.clear();
  for (int64_t i = 0; i < z_planes; ++i)
    cfg.z_planes_um.push_back(-6.0 + 12.0 * double(i) / double(z_planes - 1));
  cfg.validate();
  return cfg;
}

std::vector<Tensor> phantom_dataset(const optics::OpticsConfig& cfg,
                                    int count, uint64_t seed) {
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    data::PhantomParams p;
    p.dims = {cfg.z_count(), cfg.camera_h, cfg.camera_w};
    p.voxel_um = 1.0;
    p.nucleus_count = 5;
    p.radius_um_min = 1.2;
    p.radius_um_max = 2.2;
    p.background = 0.02;
    p.seed = seed + uint64_t(i);
    out.push_back(data::generate_phantom(p));
  }
  return out;
}

double window_mean(const std::vector<MetricsRecord>& log, size_t start,
                   size_t count) {
  double s = 0.0;
  for (size_t i = start; i < start + count; ++i) s += log[i].loss;
  return s / double(count);
}

}  // namespace

TEST_CASE("high pass filter") {
  SUBCASE("zero input maps to zero") {
    Tape t;
    const Tensor h =
        t.value(high_pass(t.constant(Tensor::zeros({2, 8, 8})), 2.0));
    CHECK(h.abs_max() == 0.0);
  }
  SUBCASE("constant volume is flat in the interior") {
    Tape t;
    const double sigma = 1.5;
    const Tensor h = t.value(
        high_pass(t.constant(Tensor::full({1, 32, 32}, 4.0)), sigma));
    const int64_t margin = int64_t(std::ceil(4.0 * sigma));
    for (int64_t i = margin; i < 32 - margin; ++i)
      for (int64_t j = margin; j < 32 - margin; ++j)
        CHECK(std::abs(h.at(int64_t(0), i, j)) < 1e-10);
  }
  SUBCASE("linear in its input") {
    Rng rng(70);
    const Tensor a = random_real({8, 8}, rng);
    const Tensor b = random_real({8, 8}, rng);
    Tape t;
    const Tensor lhs = t.value(high_pass(
        op::add(op::scale(t.constant(a), 2.0), op::scale(t.constant(b), -3.0)),
        2.0));
    const Tensor ha = t.value(high_pass(t.constant(a), 2.0));
    const Tensor hb = t.value(high_pass(t.constant(b), 2.0));
    Tensor want = Tensor::zeros({8, 8});
    for (int64_t i = 0; i < 64; ++i)
      want.rdata()[i] = 2.0 * ha.rdata()[i] - 3.0 * hb.rdata()[i];
    CHECK(max_abs_diff(lhs, want) < 1e-12);
  }
  SUBCASE("matches the dense serial reference blur") {
    Rng rng(71);
    const Tensor x = random_real({12, 12}, rng);
    Tape t;
    const Tensor h = t.value(high_pass(t.constant(x), 2.0));
    const Tensor blur = ref::gaussian_blur2d(x, 2.0);
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(h.rdata()[i] ==
            doctest::Approx(x.rdata()[i] - blur.rdata()[i]).epsilon(1e-10));
  }
}

TEST_CASE("loss definition") {
  Rng rng(72);
  const Tensor v = random_real({2, 16, 16}, rng, 0.1, 1.0);
  LossConfig cfg;

  SUBCASE("perfect reconstruction scores zero") {
    Tape t;
    CHECK(t.value(loss(t.constant(v), v, cfg)).item() == doctest::Approx(0.0));
  }
  SUBCASE("scale invariance") {
    Tensor v7 = v;
    for (int64_t i = 0; i < v7.numel(); ++i) v7.rdata()[i] *= 7.0;
    const Tensor vhat = random_real({2, 16, 16}, rng, 0.0, 1.0);
    Tensor vhat7 = vhat;
    for (int64_t i = 0; i < vhat7.numel(); ++i) vhat7.rdata()[i] *= 7.0;
    Tape t;
    const double l1 = t.value(loss(t.constant(vhat), v, cfg)).item();
    const double l2 = t.value(loss(t.constant(vhat7), v7, cfg)).item();
    CHECK(std::abs(l1 - l2) < 1e-10);
  }
  SUBCASE("identity high-pass hook gives (1 + beta) NMSE") {
    LossConfig hook = cfg;
    hook.highpass = HighPassKind::Identity;
    hook.beta = 0.1;
    Tape t;
    const double l =
        t.value(loss(t.constant(Tensor::zeros(v.shape())), v, hook)).item();
    CHECK(l == doctest::Approx(1.1).epsilon(1e-12));
  }
  SUBCASE("shape mismatch is rejected") {
    Tape t;
    CHECK_THROWS_AS(
        (void)loss(t.constant(Tensor::zeros({2, 8, 8})), v, cfg),
        ValidationError);
  }
  SUBCASE("differentiable in the reconstruction") {
    auto fn = [&](Tape&, const std::vector<Var>& leaves) {
      return loss(leaves[0], v, cfg);
    };
    CHECK(test::gradcheck(fn, {random_real({2, 16, 16}, rng, 0.0, 1.0)})
              .max_rel_err < 1e-4);
  }
}

TEST_CASE("adam optimizer") {
  SUBCASE("first step moves by about -lr * sign(g)") {
    Tensor p = Tensor::from_real({3}, {1.0, -2.0, 0.5});
    Tensor g = Tensor::from_real({3}, {0.3, -4.0, 1e-3});
    AdamState st = AdamState::init({p});
    std::vector<Tensor*> params{&p};
    adam_step(params, {g}, st, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    CHECK(p.rdata()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
    CHECK(p.rdata()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-4));
    CHECK(p.rdata()[2] == doctest::Approx(0.5 - 0.1).epsilon(1e-3));
  }
  SUBCASE("zero gradient leaves parameters untouched") {
    Tensor p = Tensor::from_real({2}, {1.5, -0.25});
    AdamState st = AdamState::init({p});
    std::vector<Tensor*> params{&p};
    adam_step(params, {Tensor::zeros({2})}, st, AdamConfig{});
    CHECK(p.rdata()[0] == 1.5);
    CHECK(p.rdata()[1] == -0.25);
  }
  SUBCASE("matches the scalar reference trace on f(x) = x^2") {
    const auto want = ref::adam_scalar_trace(
        1.0, 0.1, 0.9, 0.999, 1e-8, 10, [](double x) { return 2.0 * x; });
    Tensor p = Tensor::from_real({1}, {1.0});
    AdamState st = AdamState::init({p});
    for (int step = 0; step < 10; ++step) {
      Tape t;
      Var x = t.leaf(p, true);
      t.backward(op::sum_all(op::square(x)));
      std::vector<Tensor*> params{&p};
      adam_step(params, {t.grad(x)}, st, AdamConfig{0.1, 0.9, 0.999, 1e-8});
      CHECK(p.rdata()[0] == doctest::Approx(want[size_t(step)]).epsilon(1e-12));
    }
  }
  SUBCASE("NaN gradients fail fast") {
    Tensor p = Tensor::from_real({1}, {1.0});
    AdamState st = AdamState::init({p});
    std::vector<Tensor*> params{&p};
    Tensor bad = Tensor::from_real({1}, {std::nan("")});
    CHECK_THROWS_AS(adam_step(params, {bad}, st, AdamConfig{}), NumericError);
  }
  SUBCASE("complex parameters update channelwise") {
    Tensor p = Tensor::from_complex({1}, {cdouble(1.0, -1.0)});
    Tensor g = Tensor::from_complex({1}, {cdouble(1.0, -1.0)});
    AdamState st = AdamState::init({p});
    std::vector<Tensor*> params{&p};
    adam_step(params, {g}, st, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    CHECK(p.cdata()[0].real() == doctest::Approx(0.9).epsilon(1e-4));
    CHECK(p.cdata()[0].imag() == doctest::Approx(-0.9).epsilon(1e-4));
  }
}

TEST_CASE("plane selection") {
  std::vector<int64_t> all(8);
  std::iota(all.begin(), all.end(), 0);

  SUBCASE("dense mode leaves no gradient-free planes") {
    Rng rng(73);
    const ShardPlan plan = select_planes(all, 8, 8, 2, rng);
    CHECK(plan.z_no_gradient.empty());
    CHECK(plan.z_gradient.size() == 8);
  }
  SUBCASE("disjointness and coverage over 1000 seeded draws") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
      Rng rng(seed);
      const ShardPlan plan = select_planes(all, 5, 4, 2, rng);
      std::vector<char> seen(8, 0);
      for (int64_t z : plan.z_gradient) {
        CHECK(!seen[size_t(z)]);
        seen[size_t(z)] = 1;
      }
      for (int64_t z : plan.z_no_gradient) {
        CHECK(!seen[size_t(z)]);
        seen[size_t(z)] = 1;
      }
      CHECK(std::count(seen.begin(), seen.end(), 1) == 8);
      CHECK(plan.recon_chunks.size() == 2);
      CHECK(plan.recon_chunks[0].size() == plan.recon_chunks[1].size());
      size_t total = 0;
      for (const auto& c : plan.recon_chunks) total += c.size();
      CHECK(total == plan.z_reconstruct.size());
    }
  }
  SUBCASE("same seed gives the identical plan") {
    Rng a(99), b(99);
    const ShardPlan p1 = select_planes(all, 4, 4, 2, a);
    const ShardPlan p2 = select_planes(all, 4, 4, 2, b);
    CHECK(p1.z_gradient == p2.z_gradient);
    CHECK(p1.z_no_gradient == p2.z_no_gradient);
    CHECK(p1.z_reconstruct == p2.z_reconstruct);
  }
  SUBCASE("n_grad out of range is rejected") {
    Rng rng(1);
    CHECK_THROWS_AS((void)select_planes(all, 9, 4, 1, rng), ValidationError);
  }
  SUBCASE("n_recon is rounded down to equal chunks") {
    Rng rng(5);
    const ShardPlan plan = select_planes(all, 2, 7, 3, rng);
    CHECK(plan.z_reconstruct.size() == 6);
    for (const auto& c : plan.recon_chunks) CHECK(c.size() == 2);
  }
}

TEST_CASE("sharded imaging matches the single-worker path") {
  const optics::OpticsConfig cfg = train_toy_config(8);
  Rng rng(74);
  Tape t;
  Var phi = t.leaf(random_real({48, 48}, rng, -2.0, 2.0), false);
  const auto psf = optics::compute_psf_stack(phi, cfg);
  std::vector<Var> vol;
  for (int64_t z = 0; z < 8; ++z)
    vol.push_back(t.leaf(random_real({16, 16}, rng, 0.0, 1.0), false));

  const Tensor single = t.value(optics::image_volume(psf, vol));

  SUBCASE("one chunk reproduces image_volume") {
    const Tensor one = t.value(sharded_image({psf}, {vol}));
    CHECK(max_abs_diff(one, single) == 0.0);
  }
  SUBCASE("four round-robin chunks agree to 1e-10") {
    std::vector<std::vector<Var>> psf_chunks(4), vol_chunks(4);
    for (int64_t z = 0; z < 8; ++z) {
      psf_chunks[size_t(z % 4)].push_back(psf[size_t(z)]);
      vol_chunks[size_t(z % 4)].push_back(vol[size_t(z)]);
    }
    const Tensor four = t.value(sharded_image(psf_chunks, vol_chunks));
    CHECK(max_abs_diff(four, single) / single.max() < 1e-10);
  }
  SUBCASE("misaligned chunks are rejected") {
    std::vector<std::vector<Var>> psf_chunks{{psf[0], psf[1]}};
    std::vector<std::vector<Var>> vol_chunks{{vol[0]}};
    CHECK_THROWS_AS((void)sharded_image(psf_chunks, vol_chunks),
                    ValidationError);
  }
}

TEST_CASE("sharded reconstruction loss") {
  Rng rng(75);
  const int64_t h = 12, w = 12;
  std::vector<Tensor> v_planes, vhat_planes;
  for (int i = 0; i < 4; ++i) {
    v_planes.push_back(random_real({h, w}, rng, 0.1, 1.0));
    vhat_planes.push_back(random_real({h, w}, rng, 0.0, 1.0));
  }
  Tensor v_stack = Tensor::zeros({4, h, w});
  for (int i = 0; i < 4; ++i)
    std::copy(v_planes[size_t(i)].rdata(), v_planes[size_t(i)].rdata() + h * w,
              v_stack.rdata() + i * h * w);
  Tensor vhat_stack = Tensor::zeros({4, h, w});
  for (int i = 0; i < 4; ++i)
    std::copy(vhat_planes[size_t(i)].rdata(),
              vhat_planes[size_t(i)].rdata() + h * w,
              vhat_stack.rdata() + i * h * w);

  LossConfig cfg;
  const LossNormalizers norm = loss_normalizers(v_stack, cfg);

  Tape t;
  auto mk = [&](std::vector<int> idx) {
    std::vector<Var> vh;
    std::vector<Tensor> vt;
    for (int i : idx) {
      vh.push_back(t.constant(vhat_planes[size_t(i)]));
      vt.push_back(v_planes[size_t(i)]);
    }
    return std::make_pair(vh, vt);
  };

  SUBCASE("single chunk equals the plain loss") {
    auto [vh, vt] = mk({0, 1, 2, 3});
    const double sharded =
        t.value(sharded_reconstruct_loss({vh}, {vt}, norm, cfg)).item();
    const double plain =
        t.value(loss_with_normalizers(t.constant(vhat_stack), v_stack, cfg,
                                      norm))
            .item();
    CHECK(sharded == doctest::Approx(plain).epsilon(1e-13));
  }
  SUBCASE("perfect replicas score zero") {
    std::vector<Var> vh;
    std::vector<Tensor> vt;
    for (int i = 0; i < 4; ++i) {
      vh.push_back(t.constant(v_planes[size_t(i)]));
      vt.push_back(v_planes[size_t(i)]);
    }
    CHECK(t.value(sharded_reconstruct_loss({vh}, {vt}, norm, cfg)).item() ==
          doctest::Approx(0.0));
  }
  SUBCASE("two equal chunks match the unsharded value") {
    auto [vh1, vt1] = mk({0, 1});
    auto [vh2, vt2] = mk({2, 3});
    const double sharded =
        t.value(sharded_reconstruct_loss({vh1, vh2}, {vt1, vt2}, norm, cfg))
            .item();
    const double plain =
        t.value(loss_with_normalizers(t.constant(vhat_stack), v_stack, cfg,
                                      norm))
            .item();
    CHECK(std::abs(sharded - plain) < 1e-12);
  }
  SUBCASE("unequal chunks are rejected") {
    auto [vh1, vt1] = mk({0});
    auto [vh2, vt2] = mk({1, 2});
    CHECK_THROWS_AS(
        (void)sharded_reconstruct_loss({vh1, vh2}, {vt1, vt2}, norm, cfg),
        ValidationError);
  }
  SUBCASE("missing normalizers are rejected") {
    auto [vh, vt] = mk({0, 1});
    LossNormalizers bad;
    bad.hnmse_denom = 0.0;
    CHECK_THROWS_AS((void)sharded_reconstruct_loss({vh}, {vt}, bad, cfg),
                    ValidationError);
  }
}

TEST_CASE("gradient-free planes record no backward closures") {
  const optics::OpticsConfig cfg = train_toy_config(4);
  Rng rng(76);
  Tape tape;
  Var phi = tape.leaf(random_real({48, 48}, rng), true);
  (void)optics::compute_psf_stack(phi, cfg, {0, 1});
  const size_t tracked_after_grad = tape.tracked_node_count();
  CHECK(tracked_after_grad > 0);
  Var frozen = tape.detach(phi);
  (void)optics::compute_psf_stack(frozen, cfg, {2, 3});
  CHECK(tape.tracked_node_count() == tracked_after_grad);
}

TEST_CASE("training loops") {
  const optics::OpticsConfig cfg = train_toy_config(4);
  const auto dataset = phantom_dataset(cfg, 4, 1000);
  const net::NetworkSpec mini = net::presets::fouriernet2d_mini(16, 16, 2);

  SUBCASE("zero learning rates keep parameters bit-identical") {
    ReplicaStore replicas = ReplicaStore::make(mini, 4, 11);
    const Tensor phi0 = optics::init_phase_mask(optics::MaskInit::Zeros, cfg);
    std::vector<Tensor> before;
    for (const auto& p : replicas.nets[0].params()) before.push_back(p.value);

    TrainConfig tc;
    tc.mode = TrainMode::Joint;
    tc.lr_theta = 0.0;
    tc.lr_phi = 0.0;
    tc.iterations = 10;
    tc.seed = 3;
    const TrainResult res = foe::train::train(tc, cfg, phi0, replicas, dataset);
    CHECK(max_abs_diff(res.phi, phi0) == 0.0);
    for (size_t i = 0; i < before.size(); ++i)
      CHECK(max_abs_diff(replicas.nets[0].params()[i].value, before[i]) == 0.0);
  }

  SUBCASE("decoder-only training reduces the smoothed loss") {
    ReplicaStore replicas = ReplicaStore::make(mini, 4, 21);
    const Tensor phi0 =
        optics::init_phase_mask(optics::MaskInit::PencilsHex, cfg);
    TrainConfig tc;
    tc.mode = TrainMode::DecoderOnly;
    tc.lr_theta = 3e-3;
    tc.iterations = 120;
    tc.seed = 5;
    const TrainResult res = foe::train::train(tc, cfg, phi0, replicas, dataset);
    REQUIRE(res.log.size() == 120);
    const double head = window_mean(res.log, 0, 20);
    const double tail = window_mean(res.log, 100, 20);
    CHECK(tail < head);
  }

  SUBCASE("joint training moves the phase mask and decreases loss") {
    ReplicaStore replicas = ReplicaStore::make(mini, 4, 31);
    const Tensor phi0 = optics::init_phase_mask(optics::MaskInit::Zeros, cfg);
    TrainConfig tc;
    tc.mode = TrainMode::Joint;
    tc.lr_theta = 3e-3;
    tc.lr_phi = 1e-2;
    tc.iterations = 120;
    tc.seed = 7;
    const TrainResult res = foe::train::train(tc, cfg, phi0, replicas, dataset);
    CHECK(max_abs_diff(res.phi, phi0) > 0.0);
    const double head = window_mean(res.log, 0, 20);
    const double tail = window_mean(res.log, 100, 20);
    CHECK(tail < head);
    for (const auto& rec : res.log) CHECK(std::isfinite(rec.loss));
  }

  SUBCASE("metrics log is deterministic per seed and worker count") {
    for (int workers : {1, 2}) {
      ReplicaStore r1 = ReplicaStore::make(mini, 4, 41);
      ReplicaStore r2 = ReplicaStore::make(mini, 4, 41);
      const Tensor phi0 = optics::init_phase_mask(optics::MaskInit::Zeros, cfg);
      TrainConfig tc;
      tc.mode = TrainMode::DecoderOnly;
      tc.iterations = 8;
      tc.seed = 9;
      tc.workers = workers;
      const TrainResult a = foe::train::train(tc, cfg, phi0, r1, dataset);
      const TrainResult b = foe::train::train(tc, cfg, phi0, r2, dataset);
      REQUIRE(a.log.size() == b.log.size());
      for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].l_hnmse == b.log[i].l_hnmse);
        CHECK(a.log[i].l_nmse == b.log[i].l_nmse);
      }
    }
  }

  SUBCASE("shard invariance of the training loss") {
    const Tensor phi0 = optics::init_phase_mask(optics::MaskInit::Zeros, cfg);
    std::vector<double> first_losses;
    for (int workers : {1, 2, 4}) {
      ReplicaStore replicas = ReplicaStore::make(mini, 4, 51);
      TrainConfig tc;
      tc.mode = TrainMode::DecoderOnly;
      tc.iterations = 1;
      tc.seed = 13;
      tc.workers = workers;
      const TrainResult res = foe::train::train(tc, cfg, phi0, replicas, dataset);
      first_losses.push_back(res.log[0].loss);
    }
    CHECK(std::abs(first_losses[0] - first_losses[1]) /
              std::abs(first_losses[0]) <
          1e-9);
    CHECK(std::abs(first_losses[0] - first_losses[2]) /
              std::abs(first_losses[0]) <
          1e-9);
  }
}

TEST_CASE("joint training at default rates stays finite for 1000 iterations") {
  const optics::OpticsConfig cfg = train_toy_config(4);
  const auto dataset = phantom_dataset(cfg, 4, 2000);
  ReplicaStore replicas =
      ReplicaStore::make(net::presets::fouriernet2d_mini(16, 16, 2), 4, 61);
  const Tensor phi0 =
      optics::init_phase_mask(optics::MaskInit::PencilsHex, cfg);
  TrainConfig tc;
  tc.mode = TrainMode::Joint;  // defaults: lr_theta 1e-4, lr_phi 1e-2, beta 0.1
  tc.iterations = 1000;
  tc.seed = 17;
  const TrainResult res = foe::train::train(tc, cfg, phi0, replicas, dataset);
  REQUIRE(res.log.size() == 1000);
  for (const auto& rec : res.log) CHECK(std::isfinite(rec.loss));
  CHECK(res.phi.all_finite());
}

TEST_CASE("train config JSON round trip") {
  TrainConfig tc;
  tc.mode = TrainMode::Joint;
  tc.lr_phi = 0.5;
  tc.iterations = 77;
  tc.n_grad = 3;
  const TrainConfig back = TrainConfig::from_json(tc.to_json());
  CHECK(back.mode == TrainMode::Joint);
  CHECK(back.lr_phi == doctest::Approx(0.5));
  CHECK(back.iterations == 77);
  CHECK(back.n_grad == 3);
}
