#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "foe/net.hpp"
#include "foe_ref/reference.hpp"
#include "testutil.hpp"

using namespace foe;
using namespace foe::net;
namespace op = foe::ops;
using test::gradcheck;
using test::max_abs_diff;
using test::random_complex;
using test::random_real;

namespace {

// Spectrum of a spatial delta at the padded-grid center (H, W).
Tensor centered_delta_spectrum(int64_t h, int64_t w) {
  Tensor d = Tensor::zeros({2 * h, 2 * w});
  d.at(h, w) = 1.0;
  Tape t;
  return t.value(op::fft2(t.leaf(d, false))).reshaped({1, 1, 2 * h, 2 * w});
}

Tensor dc_only_spectrum(int64_t h, int64_t w) {
  Tensor s = Tensor::zeros({1, 1, 2 * h, 2 * w}, DType::C128);
  s.cat(0, 0, 0, 0) = cdouble(1.0, 0.0);
  return s;
}

}  // namespace

TEST_CASE("fourier_conv2d identity kernel reproduces the input") {
  Rng rng(50);
  const int64_t h = 8, w = 8;
  const Tensor x = random_real({1, h, w}, rng);
  Tape t;
  Var y = fourier_conv2d(t.leaf(x, false),
                         t.leaf(centered_delta_spectrum(h, w), false),
                         t.leaf(Tensor::zeros({1}), false));
  CHECK(max_abs_diff(t.value(y), x) < 1e-10);
}

TEST_CASE("fourier_conv2d DC-only kernel produces a mean-consistent constant") {
  Rng rng(51);
  const int64_t h = 6, w = 6;
  const Tensor x = random_real({1, h, w}, rng);
  Tape t;
  Var y = fourier_conv2d(t.leaf(x, false), t.leaf(dc_only_spectrum(h, w), false),
                         t.leaf(Tensor::zeros({1}), false));
  const Tensor vy = t.value(y);
  const double want = x.sum() / std::sqrt(double(4 * h * w));
  for (int64_t i = 0; i < vy.numel(); ++i)
    CHECK(vy.rdata()[i] == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("fourier_conv2d equals the spatial-domain circular oracle") {
  Rng rng(52);
  const int64_t h = 8, w = 8;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_real({1, h, w}, rng);
    const Tensor wspec = random_complex({1, 1, 2 * h, 2 * w}, rng);
    const Tensor bias = random_real({1}, rng);

    Tape t;
    const Tensor got = t.value(fourier_conv2d(
        t.leaf(x, false), t.leaf(wspec, false), t.leaf(bias, false)));

    // Oracle: kernel = Re(ifft2(w)) with index 0 as zero displacement,
    // circular convolution on the padded grid, center-aligned crop.
    Tape t2;
    const Tensor k0 = t2.value(
        op::real_part(op::ifft2(t2.leaf(wspec.reshaped({2 * h, 2 * w}), false))));
    Tensor xp = Tensor::zeros({2 * h, 2 * w});
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        xp.at(i + h / 2, j + w / 2) = x.at(int64_t(0), i, j);
    const Tensor full = ref::circular_conv2d(xp, k0);
    Tensor want = Tensor::zeros({1, h, w});
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        // roll by (-h, -w), then crop the centered window at (h/2, w/2)
        const int64_t src_y = (i + h / 2 + h) % (2 * h);
        const int64_t src_x = (j + w / 2 + w) % (2 * w);
        want.at(int64_t(0), i, j) = full.at(src_y, src_x) + bias.rdata()[0];
      }
    CHECK(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("fourier_conv2d rejects mismatched weight extents") {
  Rng rng(53);
  Tape t;
  Var x = t.leaf(random_real({1, 8, 8}, rng), false);
  Var w = t.leaf(random_complex({1, 1, 8, 8}, rng), false);
  CHECK_THROWS_AS((void)fourier_conv2d(x, w, t.leaf(Tensor::zeros({1}), false)),
                  ValidationError);
}

TEST_CASE("single-level multiscale equals fourier_conv2d") {
  Rng rng(54);
  const int64_t h = 8, w = 8;
  const Tensor x = random_real({1, h, w}, rng);
  const Tensor wspec = random_complex({2, 1, 2 * h, 2 * w}, rng);
  const Tensor bias = random_real({2}, rng);
  Tape t;
  Var xv = t.leaf(x, false);
  Var wv = t.leaf(wspec, false);
  Var bv = t.leaf(bias, false);
  const auto levels = multiscale_fourier_conv(xv, {wv}, {bv}, {1});
  REQUIRE(levels.size() == 1);
  const Tensor direct = t.value(fourier_conv2d(xv, wv, bv));
  CHECK(max_abs_diff(t.value(levels[0]), direct) < 1e-12);
}

TEST_CASE("multiscale level-2 output commutes with spectral downsampling") {
  Rng rng(55);
  const int64_t h = 8, w = 8;
  const Tensor x = random_real({1, h, w}, rng);
  const Tensor w1 = random_complex({3, 1, 2 * h, 2 * w}, rng);
  const Tensor w2 = random_complex({3, 1, h, w}, rng);
  const Tensor b1 = random_real({3}, rng);
  const Tensor b2 = random_real({3}, rng);

  Tape t;
  Var xv = t.leaf(x, false);
  const auto levels = multiscale_fourier_conv(
      xv, {t.leaf(w1, false), t.leaf(w2, false)},
      {t.leaf(b1, false), t.leaf(b2, false)}, {1, 2});
  REQUIRE(levels.size() == 2);

  // Oracle route: spectrally downsample the padded input, then run the
  // single-scale Fourier step on the downsampled field.
  Var padded = op::pad2(xv, 2 * h, 2 * w);
  Var down = op::ifft2(op::spectral_crop(op::fft2(padded), h, w));
  Var spec2 = op::fft2(down);
  const double gain = std::sqrt(double(h) * double(w));
  std::vector<Var> outs;
  for (int64_t co = 0; co < 3; ++co) {
    Var wi = op::reshape(op::gather_planes(t.leaf(w2, false), {co}), {h, w});
    Var prod = op::cmul(wi, op::reshape(spec2, {h, w}));
    Var full = op::scale(op::real_part(op::ifft2(prod)), gain);
    Var out = op::add(op::crop2(op::ifftshift2(full), h / 2, w / 2),
                      t.constant(Tensor::scalar(b2.rdata()[co])));
    outs.push_back(op::reshape(out, {1, h / 2, w / 2}));
  }
  const Tensor want = t.value(op::concat0(outs));
  CHECK(max_abs_diff(t.value(levels[1]), want) < 1e-9);
}

TEST_CASE("flat (DC-only) kernels preserve constants at every level") {
  const int64_t h = 8, w = 8;
  Tape t;
  Var x = t.leaf(Tensor::full({1, h, w}, 2.0), false);
  std::vector<Var> ws, bs;
  std::vector<int64_t> factors{1, 2};
  for (int64_t f : factors) {
    Tensor spec = Tensor::zeros({1, 1, 2 * h / f, 2 * w / f}, DType::C128);
    spec.cat(0, 0, 0, 0) = cdouble(1.0, 0.0);
    ws.push_back(t.leaf(spec, false));
    bs.push_back(t.leaf(Tensor::zeros({1}), false));
  }
  const auto levels = multiscale_fourier_conv(x, ws, bs, factors);
  for (const Var& lv : levels) {
    const Tensor v = t.value(lv);
    const double first = v.rdata()[0];
    for (int64_t i = 0; i < v.numel(); ++i)
      CHECK(v.rdata()[i] == doctest::Approx(first).epsilon(1e-10));
  }
}

TEST_CASE("multiscale rejects bad crop factors") {
  Rng rng(56);
  Tape t;
  Var x = t.leaf(random_real({1, 8, 8}, rng), false);
  Var w = t.leaf(random_complex({1, 1, 16, 16}, rng), false);
  Var b = t.leaf(Tensor::zeros({1}), false);
  CHECK_THROWS_AS(
      (void)multiscale_fourier_conv(x, {w, w}, {b, b}, {1, 3}),
      ValidationError);
  CHECK_THROWS_AS((void)multiscale_fourier_conv(x, {w, w}, {b, b}, {2, 1}),
                  ValidationError);
}

TEST_CASE("no wraparound for compactly supported kernels") {
  const int64_t h = 8, w = 8;
  // Centered bump of radius 2 on the padded grid.
  Tensor k_centered = Tensor::zeros({2 * h, 2 * w});
  for (int64_t u = -2; u <= 2; ++u)
    for (int64_t v = -2; v <= 2; ++v)
      k_centered.at(h + u, w + v) = 1.0 / (1.0 + double(u * u + v * v));
  Tape t;
  const Tensor wspec = t.value(op::fft2(t.leaf(k_centered, false)))
                           .reshaped({1, 1, 2 * h, 2 * w});

  Tensor x = Tensor::zeros({1, h, w});
  x.at(int64_t(0), int64_t(0), int64_t(0)) = 1.0;  // impulse at a corner
  const Tensor y = t.value(fourier_conv2d(
      t.leaf(x, false), t.leaf(wspec, false), t.leaf(Tensor::zeros({1}), false)));
  // Response reaches only radius 2 around the impulse; the far corner
  // quadrant must be exactly quiet.
  for (int64_t i = 4; i < h; ++i)
    for (int64_t j = 4; j < w; ++j)
      CHECK(std::abs(y.at(int64_t(0), i, j)) < 1e-12);
}

TEST_CASE("global receptive field in a single fourier layer") {
  Rng rng(57);
  const int64_t h = 8, w = 8;
  Tape t;
  Var x = t.leaf(random_real({1, h, w}, rng), true);
  Var wv = t.leaf(random_complex({1, 1, 2 * h, 2 * w}, rng), false);
  Var y = fourier_conv2d(x, wv, t.leaf(Tensor::zeros({1}), false));
  Tensor picker = Tensor::zeros({1, h, w});
  picker.at(int64_t(0), int64_t(0), int64_t(0)) = 1.0;
  t.backward(op::sum_all(op::mul(y, t.constant(picker))));
  const Tensor g = t.grad(x);
  CHECK(std::abs(g.at(int64_t(0), h - 1, w - 1)) > 1e-12);
}

TEST_CASE("input scaling wrapper") {
  Rng rng(58);
  SUBCASE("positive homogeneity by construction") {
    const Tensor c = random_real({1, 8, 8}, rng, 0.1, 2.0);
    Tensor c2 = c;
    for (int64_t i = 0; i < c2.numel(); ++i) c2.rdata()[i] *= 2.0;
    // Body with a non-homogeneous nonlinearity.
    auto body = [](Var v) {
      return op::add_scalar(op::square(op::relu(v)), 0.5);
    };
    Tape t;
    const Tensor y1 =
        t.value(input_scaled_forward(t, body, t.leaf(c, false), 0.01));
    const Tensor y2 =
        t.value(input_scaled_forward(t, body, t.leaf(c2, false), 0.01));
    for (int64_t i = 0; i < y1.numel(); ++i)
      CHECK(y2.rdata()[i] ==
            doctest::Approx(2.0 * y1.rdata()[i]).epsilon(1e-9));
  }
  SUBCASE("all-equal input is normalized to the scale factor") {
    Tape t;
    Tensor seen;
    auto body = [&](Var v) {
      seen = t.value(v);
      return v;
    };
    (void)input_scaled_forward(t, body, t.leaf(Tensor::full({4, 4}, 7.0), false),
                               0.01);
    for (int64_t i = 0; i < seen.numel(); ++i)
      CHECK(seen.rdata()[i] == doctest::Approx(0.01).epsilon(1e-12));
  }
  SUBCASE("zero input passes through without NaN") {
    Tape t;
    auto body = [](Var v) { return op::add_scalar(v, 3.0); };
    const Tensor y = t.value(
        input_scaled_forward(t, body, t.leaf(Tensor::zeros({4, 4}), false), 0.01));
    CHECK(y.all_finite());
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.rdata()[i] == doctest::Approx(3.0));
  }
}

TEST_CASE("reshape 2d->3d matches the published shape and preserves bytes") {
  Rng rng(59);
  const Tensor x = random_real({60, 256, 256}, rng);
  Tape t;
  Var v = t.leaf(x, false);
  Var r = op::reshape(v, {5, 12, 256, 256});
  const Tensor& vr = t.value(r);
  CHECK(vr.shape() == Shape{5, 12, 256, 256});
  CHECK(max_abs_diff(vr.reshaped({60, 256, 256}), x) == 0.0);
  Var back = op::reshape(r, {60, 256, 256});
  CHECK(max_abs_diff(t.value(back), x) == 0.0);
}

TEST_CASE("table preset channel budget concentrates in the fourier layer") {
  const Network net = Network::build(presets::fouriernet2d(), 1);
  const double fourier = double(net.fourier_kernel_param_count());
  const double kernels = double(net.kernel_param_count());
  CHECK(fourier / kernels >= 0.99);
  // 8 complex kernels over the 512x512 padded grid plus one 11x11 head.
  CHECK(net.fourier_kernel_param_count() == 2 * 8 * 512 * 512);
  CHECK(net.kernel_param_count() - net.fourier_kernel_param_count() ==
        8 * 11 * 11);
}

TEST_CASE("network spec JSON round trip") {
  const NetworkSpec spec = presets::fourierunet3d_mini(16, 16, 4);
  const std::string text = spec.to_json();
  const NetworkSpec back = NetworkSpec::from_json(text);
  CHECK(back.name == spec.name);
  CHECK(back.input_shape == spec.input_shape);
  REQUIRE(back.layers.size() == spec.layers.size());
  for (size_t i = 0; i < back.layers.size(); ++i) {
    CHECK(back.layers[i].kind == spec.layers[i].kind);
    CHECK(back.layers[i].out_channels == spec.layers[i].out_channels);
    CHECK(back.layers[i].concat_with == spec.layers[i].concat_with);
  }
}

TEST_CASE("builder rejects invalid chaining with the offending layer named") {
  NetworkSpec bad;
  bad.name = "bad";
  bad.input_shape = {1, 16, 16};
  Layer c3;
  c3.kind = LayerKind::Conv3D;
  c3.out_channels = 2;
  c3.kernel = {3, 3, 3};
  bad.layers = {c3};
  try {
    bad.validate();
    CHECK(false);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("Conv3D") != std::string::npos);
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("mini presets build, run forward, and produce finite gradients") {
  struct Case {
    NetworkSpec spec;
    int64_t d_out;
  };
  const std::vector<Case> cases = {
      {presets::fouriernet2d_mini(16, 16), 1},
      {presets::fouriernet3d_mini(16, 16, 4), 4},
      {presets::fourierunet3d_mini(16, 16, 4), 4},
      {presets::unet2d_mini(16, 16), 1},
      {presets::unet3d_mini(16, 16, 4), 4},
  };
  Rng rng(60);
  for (const Case& c : cases) {
    CAPTURE(c.spec.name);
    Network net = Network::build(c.spec, 7);
    Tape t;
    auto bound = net.bind(t, true);
    Var input = t.leaf(random_real({1, 16, 16}, rng, 0.0, 1.0), true);
    Var out = net.forward(t, bound, input);
    const Tensor& vo = t.value(out);
    CHECK(vo.all_finite());
    CHECK(vo.min() >= 0.0);  // final ReLU head
    if (c.d_out == 1)
      CHECK(vo.shape() == Shape{1, 16, 16});
    else
      CHECK(vo.shape() == Shape{1, c.d_out, 16, 16});
    t.backward(op::mean_all(op::square(out)));
    for (const Var& pv : bound.vars) {
      if (!t.has_grad(pv)) continue;
      CHECK(t.grad(pv).all_finite());
    }
  }
}

TEST_CASE("unet2d-mini forward on zeros is defined and non-negative") {
  Network net = Network::build(presets::unet2d_mini(32, 32), 3);
  Tape t;
  auto bound = net.bind(t, false);
  Var out = net.forward(t, bound, t.leaf(Tensor::zeros({1, 32, 32}), false));
  CHECK(t.value(out).min() >= 0.0);
  CHECK(t.value(out).all_finite());
}

TEST_CASE("fixed input size contract is enforced") {
  Network net = Network::build(presets::fouriernet2d_mini(16, 16), 1);
  Tape t;
  auto bound = net.bind(t, false);
  CHECK_THROWS_AS(
      (void)net.forward(t, bound, t.leaf(Tensor::zeros({1, 32, 32}), false)),
      ValidationError);
}

TEST_CASE("checkpoint save and load round trip") {
  Network net = Network::build(presets::fouriernet2d_mini(16, 16, 2), 9);
  Tensor phi = Tensor::full({8, 8}, 0.25);
  const std::string dir = "/tmp/foe_test_ckpt";
  save_checkpoint(dir, net, &phi);
  Tensor phi2;
  Network back = load_checkpoint(dir, &phi2);
  CHECK(back.spec().name == net.spec().name);
  REQUIRE(back.params().size() == net.params().size());
  for (size_t i = 0; i < back.params().size(); ++i)
    CHECK(max_abs_diff(back.params()[i].value, net.params()[i].value) == 0.0);
  CHECK(max_abs_diff(phi, phi2) == 0.0);
}

TEST_CASE("mini network gradcheck through the full layer stack") {
  Rng rng(61);
  Network net = Network::build(presets::fouriernet2d_mini(8, 8, 1), 5);
  const Tensor input = random_real({1, 8, 8}, rng, 0.2, 1.0);
  std::vector<Tensor> leaves;
  leaves.push_back(input);
  for (const auto& p : net.params()) leaves.push_back(p.value);
  auto fn = [&](Tape& t, const std::vector<Var>& v) {
    Network::Bound b;
    for (size_t i = 1; i < v.size(); ++i) b.vars.push_back(v[i]);
    return op::mean_all(op::square(net.forward(t, b, v[0])));
  };
  CHECK(gradcheck(fn, leaves, 1e-6, 40).max_rel_err < 1e-4);
}
