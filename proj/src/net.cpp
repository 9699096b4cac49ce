#include "foe/net.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "foe/fft.hpp"
#include "foe/io.hpp"

namespace foe::net {

namespace op = foe::ops;
namespace fs = std::filesystem;

namespace {

Var channel(Var x, int64_t c) {
  // [C, ...] -> [...] for one channel.
  const Shape& s = x.tape->value(x).shape();
  Shape rest(s.begin() + 1, s.end());
  return op::reshape(op::gather_planes(x, {c}), rest);
}

Var scalar_of(Var bias, int64_t c) {
  return op::reshape(op::gather_planes(bias, {c}), Shape{});
}

}  // namespace

Var fourier_conv2d(Var x, Var w, Var bias) {
  Tape& t = *x.tape;
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  FOE_CHECK(vx.rank() == 3, "fourier_conv2d input must be [Cin, H, W]");
  FOE_CHECK(vw.rank() == 4 && vw.is_complex(),
            "fourier_conv2d weight must be complex [Cout, Cin, 2H, 2W]");
  const int64_t cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
  FOE_CHECK(vw.dim(1) == cin, "fourier_conv2d: channel mismatch");
  FOE_CHECK(vw.dim(2) == 2 * h && vw.dim(3) == 2 * wd,
            "fourier_conv2d: weight extent ", vw.dim(2), "x", vw.dim(3),
            " does not match the padded input ", 2 * h, "x", 2 * wd);
  const int64_t cout = vw.dim(0);

  Var spectrum = op::fft2(op::pad2(x, 2 * h, 2 * wd));  // [Cin, 2H, 2W]
  const double gain = std::sqrt(double(4 * h * wd));
  std::vector<Var> outs;
  outs.reserve(size_t(cout));
  for (int64_t co = 0; co < cout; ++co) {
    Var acc{};
    for (int64_t ci = 0; ci < cin; ++ci) {
      Var wi = op::reshape(op::gather_planes(w, {co * cin + ci}),
                           {2 * h, 2 * wd});
      Var prod = op::cmul(wi, channel(spectrum, ci));
      acc = ci == 0 ? prod : op::add(acc, prod);
    }
    Var full = op::scale(op::real_part(op::ifft2(acc)), gain);
    Var aligned = op::ifftshift2(full);
    Var out = op::add(op::crop2(aligned, h, wd), scalar_of(bias, co));
    outs.push_back(op::reshape(out, {1, h, wd}));
  }
  return op::concat0(outs);
}

std::vector<Var> multiscale_fourier_conv(Var x, const std::vector<Var>& w,
                                         const std::vector<Var>& bias,
                                         const std::vector<int64_t>& crop_factors) {
  Tape& t = *x.tape;
  const Tensor& vx = t.value(x);
  FOE_CHECK(vx.rank() == 3, "multiscale_fourier_conv input must be [Cin,H,W]");
  FOE_CHECK(w.size() == crop_factors.size() && bias.size() == w.size(),
            "multiscale_fourier_conv: per-level weight/bias/factor lists "
            "must align");
  FOE_CHECK(!w.empty(), "multiscale_fourier_conv: no levels");
  const int64_t cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
  const int64_t ph = 2 * h, pw = 2 * wd;

  for (size_t i = 0; i < crop_factors.size(); ++i) {
    FOE_CHECK(crop_factors[i] >= 1 && ph % crop_factors[i] == 0 &&
                  pw % crop_factors[i] == 0,
              "crop factor ", crop_factors[i], " does not divide the padded "
              "extent ", ph, "x", pw);
    if (i > 0)
      FOE_CHECK(crop_factors[i] > crop_factors[i - 1],
                "crop factors must be strictly increasing");
  }

  Var spectrum = op::fft2(op::pad2(x, ph, pw));  // computed exactly once
  std::vector<Var> levels;
  levels.reserve(w.size());
  for (size_t i = 0; i < w.size(); ++i) {
    const int64_t f = crop_factors[i];
    const int64_t mh = ph / f, mw = pw / f;
    const Tensor& vw = t.value(w[i]);
    FOE_CHECK(vw.rank() == 4 && vw.is_complex() && vw.dim(1) == cin &&
                  vw.dim(2) == mh && vw.dim(3) == mw,
              "level ", i, " weight must be complex [Cout, ", cin, ", ", mh,
              ", ", mw, "]");
    const int64_t cout = vw.dim(0);
    Var banded = f == 1 ? spectrum : op::spectral_crop(spectrum, mh, mw);
    const double gain = std::sqrt(double(mh) * double(mw));
    std::vector<Var> outs;
    outs.reserve(size_t(cout));
    for (int64_t co = 0; co < cout; ++co) {
      Var acc{};
      for (int64_t ci = 0; ci < cin; ++ci) {
        Var wi = op::reshape(op::gather_planes(w[i], {co * cin + ci}),
                             {mh, mw});
        Var prod = op::cmul(wi, channel(banded, ci));
        acc = ci == 0 ? prod : op::add(acc, prod);
      }
      Var full = op::scale(op::real_part(op::ifft2(acc)), gain);
      Var aligned = op::ifftshift2(full);
      Var out =
          op::add(op::crop2(aligned, mh / 2, mw / 2), scalar_of(bias[i], co));
      outs.push_back(op::reshape(out, {1, mh / 2, mw / 2}));
    }
    levels.push_back(op::concat0(outs));
  }
  return levels;
}

Var input_scaled_forward(Tape& t, const std::function<Var(Var)>& body, Var c,
                         double scale_factor) {
  const Tensor& vc = t.value(c);
  FOE_CHECK(!vc.is_complex(), "input scaling expects a real image");
  double median = 0.0;
  {
    std::vector<double> tmp(vc.rdata(), vc.rdata() + vc.numel());
    const size_t mid = (tmp.size() - 1) / 2;
    std::nth_element(tmp.begin(), tmp.begin() + mid, tmp.end());
    median = tmp[mid];
  }
  Var m{};
  if (median > 0.0) {
    m = op::scale(op::median_all(c), 1.0 / scale_factor);
  } else if (vc.sum() > 0.0) {
    m = op::scale(op::mean_all(c), 1.0 / scale_factor);
  } else {
    m = t.constant(Tensor::scalar(1.0));
  }
  Var scaled = op::mul(c, op::recip(m));
  Var y = body(scaled);
  return op::mul(y, m);
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::InputScaling: return "InputScaling";
    case LayerKind::FourierConv2D: return "FourierConv2D";
    case LayerKind::MultiscaleFourierConv2D: return "MultiscaleFourierConv2D";
    case LayerKind::LeakyReLU: return "LeakyReLU";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Norm: return "Norm";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::Conv3D: return "Conv3D";
    case LayerKind::Reshape2D3D: return "Reshape2D3D";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::Upsample2D: return "Upsample2D";
    case LayerKind::ConcatSkip: return "ConcatSkip";
    case LayerKind::InputRescaling: return "InputRescaling";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  static const std::map<std::string, LayerKind> kMap = {
      {"InputScaling", LayerKind::InputScaling},
      {"FourierConv2D", LayerKind::FourierConv2D},
      {"MultiscaleFourierConv2D", LayerKind::MultiscaleFourierConv2D},
      {"LeakyReLU", LayerKind::LeakyReLU},
      {"ReLU", LayerKind::ReLU},
      {"Norm", LayerKind::Norm},
      {"Conv2D", LayerKind::Conv2D},
      {"Conv3D", LayerKind::Conv3D},
      {"Reshape2D3D", LayerKind::Reshape2D3D},
      {"MaxPool2D", LayerKind::MaxPool2D},
      {"Upsample2D", LayerKind::Upsample2D},
      {"ConcatSkip", LayerKind::ConcatSkip},
      {"InputRescaling", LayerKind::InputRescaling},
  };
  auto it = kMap.find(name);
  FOE_CHECK(it != kMap.end(), "unknown layer type: ", name);
  return it->second;
}

namespace {

struct ShapeState {
  Shape cur;                          // [C,H,W] or [C,D,H,W]
  std::map<std::string, Shape> saved;
  bool scaled = false;
  bool rescaled = false;
  bool ended_with_relu = false;
};

[[noreturn]] void layer_fail(size_t idx, const Layer& l, const std::string& why) {
  throw ValidationError(str("layer ", idx, " (", layer_kind_name(l.kind),
                            "): ", why));
}

void chain_layer(size_t idx, const Layer& l, ShapeState& st) {
  Shape& s = st.cur;
  const bool is3d = s.size() == 4;
  st.ended_with_relu = false;
  switch (l.kind) {
    case LayerKind::InputScaling:
      if (st.scaled) layer_fail(idx, l, "duplicate InputScaling");
      if (l.scale_factor <= 0) layer_fail(idx, l, "scale must be positive");
      st.scaled = true;
      break;
    case LayerKind::InputRescaling:
      if (!st.scaled || st.rescaled)
        layer_fail(idx, l, "InputRescaling without matching InputScaling");
      st.rescaled = true;
      st.ended_with_relu = true;  // transparent for the head check
      break;
    case LayerKind::FourierConv2D:
      if (is3d) layer_fail(idx, l, "expects a 2D stream");
      if (l.out_channels < 1) layer_fail(idx, l, "needs out_channels");
      s = {l.out_channels, s[1], s[2]};
      break;
    case LayerKind::MultiscaleFourierConv2D: {
      if (is3d) layer_fail(idx, l, "expects a 2D stream");
      if (l.out_channels < 1 || l.levels < 1)
        layer_fail(idx, l, "needs out_channels and levels");
      int64_t f = 1;
      for (int64_t lev = 0; lev < l.levels; ++lev, f *= 2) {
        if ((2 * s[1]) % f != 0 || (2 * s[2]) % f != 0 || s[1] / f < 1)
          layer_fail(idx, l, str("level ", lev + 1, " does not divide ",
                                 s[1], "x", s[2]));
        Shape level_shape{l.out_channels, s[1] / f, s[2] / f};
        st.saved[str("scale", lev + 1)] = level_shape;
        if (lev == l.levels - 1) s = level_shape;
      }
      break;
    }
    case LayerKind::LeakyReLU:
    case LayerKind::ReLU:
      st.ended_with_relu = l.kind == LayerKind::ReLU;
      break;
    case LayerKind::Norm:
      break;
    case LayerKind::Conv2D:
      if (is3d) layer_fail(idx, l, "expects a 2D stream");
      if (l.kernel.size() != 2) layer_fail(idx, l, "kernel must be [kh, kw]");
      if (l.kernel[0] % 2 == 0 || l.kernel[1] % 2 == 0)
        layer_fail(idx, l, "kernel extents must be odd");
      s = {l.out_channels, s[1], s[2]};
      break;
    case LayerKind::Conv3D:
      if (!is3d) layer_fail(idx, l, "expects a 3D stream (use Reshape2D3D)");
      if (l.kernel.size() != 3)
        layer_fail(idx, l, "kernel must be [kd, kh, kw]");
      if (l.kernel[0] % 2 == 0 || l.kernel[1] % 2 == 0 || l.kernel[2] % 2 == 0)
        layer_fail(idx, l, "kernel extents must be odd");
      s = {l.out_channels, s[1], s[2], s[3]};
      break;
    case LayerKind::Reshape2D3D:
      if (is3d) layer_fail(idx, l, "stream is already 3D");
      if (l.depth < 1 || s[0] % l.depth != 0)
        layer_fail(idx, l, str("channel count ", s[0],
                               " not divisible by depth ", l.depth));
      s = {s[0] / l.depth, l.depth, s[1], s[2]};
      break;
    case LayerKind::MaxPool2D: {
      const size_t n = s.size();
      if (s[n - 2] % 2 != 0 || s[n - 1] % 2 != 0)
        layer_fail(idx, l, "spatial extents must be even");
      s[n - 2] /= 2;
      s[n - 1] /= 2;
      break;
    }
    case LayerKind::Upsample2D: {
      const size_t n = s.size();
      s[n - 2] *= 2;
      s[n - 1] *= 2;
      break;
    }
    case LayerKind::ConcatSkip: {
      auto it = st.saved.find(l.concat_with);
      if (it == st.saved.end())
        layer_fail(idx, l, "unknown skip tag '" + l.concat_with + "'");
      Shape skip = it->second;
      if (s.size() == 4 && skip.size() == 3) {
        if (skip[0] % s[1] != 0)
          layer_fail(idx, l, str("skip channels ", skip[0],
                                 " not divisible by depth ", s[1]));
        skip = {skip[0] / s[1], s[1], skip[1], skip[2]};
      }
      if (skip.size() != s.size() ||
          !std::equal(skip.begin() + 1, skip.end(), s.begin() + 1))
        layer_fail(idx, l, str("skip shape ", shape_str(it->second),
                               " does not align with ", shape_str(s)));
      s[0] += skip[0];
      break;
    }
  }
  if (!l.save_as.empty()) st.saved[l.save_as] = s;
}

}  // namespace

Shape NetworkSpec::validate() const {
  FOE_CHECK(input_shape.size() == 3, "input shape must be [C, H, W], got ",
            shape_str(input_shape));
  FOE_CHECK(!layers.empty(), "network has no layers");
  ShapeState st;
  st.cur = input_shape;
  for (size_t i = 0; i < layers.size(); ++i) chain_layer(i, layers[i], st);
  FOE_CHECK(st.cur[0] == 1, "network must end in a single-channel head, got ",
            st.cur[0], " channels");
  FOE_CHECK(st.ended_with_relu,
            "network must end with a ReLU head (non-negative output)");
  FOE_CHECK(st.scaled == st.rescaled,
            "InputScaling and InputRescaling must pair");
  return st.cur;
}

std::string NetworkSpec::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["input_shape"] = input_shape;
  nlohmann::json jl = nlohmann::json::array();
  for (const Layer& l : layers) {
    nlohmann::json e;
    e["type"] = layer_kind_name(l.kind);
    if (l.out_channels) e["channels"] = l.out_channels;
    if (!l.kernel.empty()) e["kernel"] = l.kernel;
    if (l.kind == LayerKind::LeakyReLU) e["slope"] = l.slope;
    if (l.kind == LayerKind::InputScaling ||
        l.kind == LayerKind::InputRescaling)
      e["scale"] = l.scale_factor;
    if (l.depth) e["depth"] = l.depth;
    if (l.levels) e["levels"] = l.levels;
    if (!l.save_as.empty()) e["save_as"] = l.save_as;
    if (!l.concat_with.empty()) e["concat_with"] = l.concat_with;
    jl.push_back(e);
  }
  j["layers"] = jl;
  return j.dump(2);
}

NetworkSpec NetworkSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("network spec parse error: ", e.what()));
  }
  NetworkSpec spec;
  try {
    spec.name = j.value("name", "custom");
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& e : j.at("layers")) {
      Layer l;
      l.kind = layer_kind_from_name(e.at("type").get<std::string>());
      l.out_channels = e.value("channels", int64_t(0));
      l.kernel = e.value("kernel", std::vector<int64_t>{});
      l.slope = e.value("slope", -0.01);
      l.scale_factor = e.value("scale", 0.01);
      l.depth = e.value("depth", int64_t(0));
      l.levels = e.value("levels", int64_t(0));
      l.save_as = e.value("save_as", std::string());
      l.concat_with = e.value("concat_with", std::string());
      spec.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("network spec field error: ", e.what()));
  }
  spec.validate();
  return spec;
}

namespace {

Tensor init_conv_weight(const Shape& shape, Rng& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / double(fan_in));
  Tensor w = Tensor::zeros(shape);
  for (int64_t i = 0; i < w.numel(); ++i)
    w.rdata()[i] = stddev * rng.normal();
  return w;
}

// Spectral weights start as the transform of a small random spatial kernel
// so the initial output variance matches standard conv initialization.
Tensor init_fourier_weight(int64_t cout, int64_t cin, int64_t ph, int64_t pw,
                           Rng& rng) {
  const double stddev = std::sqrt(2.0 / (double(cin) * double(ph) * double(pw)));
  Tensor w = Tensor::zeros({cout, cin, ph, pw}, DType::C128);
  std::vector<cdouble> kernel(size_t(ph * pw));
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t ci = 0; ci < cin; ++ci) {
      for (auto& v : kernel) v = cdouble(stddev * rng.normal(), 0.0);
      fft::fft2_ortho(kernel.data(), 1, ph, pw, false);
      std::copy(kernel.begin(), kernel.end(),
                w.cdata() + (co * cin + ci) * ph * pw);
    }
  return w;
}

}  // namespace

Network Network::build(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  Rng rng(splitmix64(seed ^ 0x9e3779b9ULL));

  ShapeState st;
  st.cur = spec.input_shape;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    const Shape before = st.cur;
    std::vector<size_t> slots;
    auto add_param = [&](const std::string& field, Tensor value) {
      slots.push_back(net.params_.size());
      net.params_.push_back({str("l", i, ".", layer_kind_name(l.kind), ".",
                                 field),
                             std::move(value)});
    };
    switch (l.kind) {
      case LayerKind::FourierConv2D:
        add_param("w", init_fourier_weight(l.out_channels, before[0],
                                           2 * before[1], 2 * before[2], rng));
        add_param("b", Tensor::zeros({l.out_channels}));
        break;
      case LayerKind::MultiscaleFourierConv2D: {
        int64_t f = 1;
        for (int64_t lev = 0; lev < l.levels; ++lev, f *= 2) {
          const int64_t mh = 2 * before[1] / f, mw = 2 * before[2] / f;
          add_param(str("w", lev + 1),
                    init_fourier_weight(l.out_channels, before[0], mh, mw,
                                        rng));
          add_param(str("b", lev + 1), Tensor::zeros({l.out_channels}));
          add_param(str("gamma", lev + 1),
                    Tensor::full({l.out_channels}, 1.0));
          add_param(str("beta", lev + 1), Tensor::zeros({l.out_channels}));
        }
        break;
      }
      case LayerKind::Conv2D:
        add_param("w", init_conv_weight(
                           {l.out_channels, before[0], l.kernel[0], l.kernel[1]},
                           rng));
        add_param("b", Tensor::zeros({l.out_channels}));
        break;
      case LayerKind::Conv3D:
        add_param("w",
                  init_conv_weight({l.out_channels, before[0], l.kernel[0],
                                    l.kernel[1], l.kernel[2]},
                                   rng));
        add_param("b", Tensor::zeros({l.out_channels}));
        break;
      case LayerKind::Norm:
        add_param("gamma", Tensor::full({before[0]}, 1.0));
        add_param("beta", Tensor::zeros({before[0]}));
        break;
      default:
        break;
    }
    net.layer_params_.push_back(std::move(slots));
    chain_layer(i, l, st);
  }
  return net;
}

int64_t Network::param_count() const {
  int64_t n = 0;
  for (const Param& p : params_)
    n += p.value.numel() * (p.value.is_complex() ? 2 : 1);
  return n;
}

int64_t Network::kernel_param_count() const {
  int64_t n = 0;
  for (const Param& p : params_) {
    const std::string field = p.name.substr(p.name.rfind('.') + 1);
    if (!field.empty() && field[0] == 'w')
      n += p.value.numel() * (p.value.is_complex() ? 2 : 1);
  }
  return n;
}

int64_t Network::fourier_kernel_param_count() const {
  int64_t n = 0;
  for (const Param& p : params_)
    if (p.value.is_complex()) n += 2 * p.value.numel();
  return n;
}

Network::Bound Network::bind(Tape& t, bool requires_grad) const {
  Bound b;
  b.vars.reserve(params_.size());
  for (const Param& p : params_) b.vars.push_back(t.leaf(p.value, requires_grad));
  return b;
}

Var Network::forward(Tape& t, const Bound& b, Var input) const {
  const Tensor& vin = t.value(input);
  FOE_CHECK(same_shape(vin.shape(), spec_.input_shape),
            "input shape ", shape_str(vin.shape()),
            " does not match the fixed network input ",
            shape_str(spec_.input_shape));

  std::map<std::string, Var> saved;
  Var cur = input;
  Var scale_m{};
  for (size_t i = 0; i < spec_.layers.size(); ++i) {
    const Layer& l = spec_.layers[i];
    const auto& slots = layer_params_[i];
    auto pv = [&](size_t k) { return b.vars[slots[k]]; };
    switch (l.kind) {
      case LayerKind::InputScaling: {
        const Tensor& vc = t.value(cur);
        std::vector<double> tmp(vc.rdata(), vc.rdata() + vc.numel());
        const size_t mid = (tmp.size() - 1) / 2;
        std::nth_element(tmp.begin(), tmp.begin() + mid, tmp.end());
        if (tmp[mid] > 0.0)
          scale_m = op::scale(op::median_all(cur), 1.0 / l.scale_factor);
        else if (vc.sum() > 0.0)
          scale_m = op::scale(op::mean_all(cur), 1.0 / l.scale_factor);
        else
          scale_m = t.constant(Tensor::scalar(1.0));
        cur = op::mul(cur, op::recip(scale_m));
        break;
      }
      case LayerKind::InputRescaling:
        cur = op::mul(cur, scale_m);
        break;
      case LayerKind::FourierConv2D:
        cur = fourier_conv2d(cur, pv(0), pv(1));
        break;
      case LayerKind::MultiscaleFourierConv2D: {
        std::vector<Var> ws, bs;
        std::vector<int64_t> factors;
        int64_t f = 1;
        for (int64_t lev = 0; lev < l.levels; ++lev, f *= 2) {
          ws.push_back(pv(size_t(4 * lev)));
          bs.push_back(pv(size_t(4 * lev + 1)));
          factors.push_back(f);
        }
        auto levels = multiscale_fourier_conv(cur, ws, bs, factors);
        for (int64_t lev = 0; lev < l.levels; ++lev) {
          Var y = op::relu(levels[size_t(lev)]);
          y = op::instance_norm(y, pv(size_t(4 * lev + 2)),
                                pv(size_t(4 * lev + 3)));
          saved[str("scale", lev + 1)] = y;
          if (lev == l.levels - 1) cur = y;
        }
        break;
      }
      case LayerKind::LeakyReLU:
        cur = op::leaky_relu(cur, l.slope);
        break;
      case LayerKind::ReLU:
        cur = op::relu(cur);
        break;
      case LayerKind::Norm:
        cur = op::instance_norm(cur, pv(0), pv(1));
        break;
      case LayerKind::Conv2D:
        cur = op::conv2d(cur, pv(0), pv(1));
        break;
      case LayerKind::Conv3D:
        cur = op::conv3d(cur, pv(0), pv(1));
        break;
      case LayerKind::Reshape2D3D: {
        const Shape& s = t.value(cur).shape();
        cur = op::reshape(cur, {s[0] / l.depth, l.depth, s[1], s[2]});
        break;
      }
      case LayerKind::MaxPool2D:
        cur = op::max_pool2(cur);
        break;
      case LayerKind::Upsample2D:
        cur = op::upsample_nearest2(cur, 2);
        break;
      case LayerKind::ConcatSkip: {
        auto it = saved.find(l.concat_with);
        FOE_CHECK(it != saved.end(), "missing skip tag ", l.concat_with);
        Var skip = it->second;
        const Shape& cs = t.value(cur).shape();
        const Shape& ss = t.value(skip).shape();
        if (cs.size() == 4 && ss.size() == 3)
          skip = op::reshape(skip, {ss[0] / cs[1], cs[1], ss[1], ss[2]});
        cur = op::concat0({cur, skip});
        break;
      }
    }
    if (!l.save_as.empty()) saved[l.save_as] = cur;
  }
  return cur;
}

namespace presets {

namespace {

Layer input_scaling() {
  Layer l;
  l.kind = LayerKind::InputScaling;
  l.scale_factor = 0.01;
  return l;
}

Layer input_rescaling() {
  Layer l;
  l.kind = LayerKind::InputRescaling;
  l.scale_factor = 0.01;
  return l;
}

Layer fourier(int64_t ch) {
  Layer l;
  l.kind = LayerKind::FourierConv2D;
  l.out_channels = ch;
  return l;
}

Layer multiscale(int64_t ch, int64_t levels) {
  Layer l;
  l.kind = LayerKind::MultiscaleFourierConv2D;
  l.out_channels = ch;
  l.levels = levels;
  return l;
}

Layer leaky() {
  Layer l;
  l.kind = LayerKind::LeakyReLU;
  l.slope = -0.01;
  return l;
}

Layer relu() {
  Layer l;
  l.kind = LayerKind::ReLU;
  return l;
}

Layer norm() {
  Layer l;
  l.kind = LayerKind::Norm;
  return l;
}

Layer conv2(int64_t ch, int64_t kh, int64_t kw, const std::string& save = "") {
  Layer l;
  l.kind = LayerKind::Conv2D;
  l.out_channels = ch;
  l.kernel = {kh, kw};
  l.save_as = save;
  return l;
}

Layer conv3(int64_t ch, int64_t kd, int64_t kh, int64_t kw) {
  Layer l;
  l.kind = LayerKind::Conv3D;
  l.out_channels = ch;
  l.kernel = {kd, kh, kw};
  return l;
}

Layer reshape23(int64_t d) {
  Layer l;
  l.kind = LayerKind::Reshape2D3D;
  l.depth = d;
  return l;
}

Layer maxpool() {
  Layer l;
  l.kind = LayerKind::MaxPool2D;
  return l;
}

Layer upsample() {
  Layer l;
  l.kind = LayerKind::Upsample2D;
  return l;
}

Layer concat(const std::string& tag) {
  Layer l;
  l.kind = LayerKind::ConcatSkip;
  l.concat_with = tag;
  return l;
}

Layer tag_output(Layer l, const std::string& tag) {
  l.save_as = tag;
  return l;
}

}  // namespace

NetworkSpec fouriernet2d(int64_t h, int64_t w, int64_t fourier_ch) {
  NetworkSpec s;
  s.name = "fouriernet2d";
  s.input_shape = {1, h, w};
  s.layers = {input_scaling(), fourier(fourier_ch),    leaky(), norm(),
              conv2(1, 11, 11), relu(), input_rescaling()};
  s.validate();
  return s;
}

NetworkSpec fouriernet3d(int64_t h, int64_t w, int64_t d, int64_t fourier_ch) {
  FOE_CHECK(fourier_ch % d == 0, "fourier channels ", fourier_ch,
            " must be divisible by depth ", d);
  const int64_t c3 = fourier_ch / d;
  NetworkSpec s;
  s.name = "fouriernet3d";
  s.input_shape = {1, h, w};
  s.layers = {input_scaling(),
              fourier(fourier_ch),
              leaky(),
              norm(),
              reshape23(d),
              conv3(c3, 11, 7, 7),
              leaky(),
              norm(),
              conv3(1, 11, 7, 7),
              relu(),
              input_rescaling()};
  s.validate();
  return s;
}

NetworkSpec fourierunet3d(int64_t h, int64_t w, int64_t d, int64_t fourier_ch,
                          int64_t levels) {
  FOE_CHECK(fourier_ch % d == 0, "fourier channels ", fourier_ch,
            " must be divisible by depth ", d);
  const int64_t c3 = fourier_ch / d;
  NetworkSpec s;
  s.name = "fourierunet3d";
  s.input_shape = {1, h, w};
  s.layers.push_back(input_scaling());
  s.layers.push_back(multiscale(fourier_ch, levels));
  s.layers.push_back(reshape23(d));
  for (int64_t lev = levels - 1; lev >= 1; --lev) {
    s.layers.push_back(upsample());
    s.layers.push_back(concat(str("scale", lev)));
    s.layers.push_back(conv3(c3, 11, 7, 7));
    s.layers.push_back(relu());
    s.layers.push_back(norm());
    s.layers.push_back(conv3(c3, 11, 7, 7));
    s.layers.push_back(relu());
    s.layers.push_back(norm());
  }
  s.layers.push_back(conv3(1, 1, 1, 1));
  s.layers.push_back(relu());
  s.layers.push_back(input_rescaling());
  s.validate();
  return s;
}

NetworkSpec unet2d(int64_t h, int64_t w, int64_t ch1, int64_t ch,
                   int64_t scales) {
  NetworkSpec s;
  s.name = "unet2d";
  s.input_shape = {1, h, w};
  s.layers.push_back(input_scaling());
  s.layers.push_back(conv2(ch1, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(norm());
  s.layers.push_back(conv2(ch, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(tag_output(norm(), "enc1"));
  for (int64_t sc = 2; sc <= scales; ++sc) {
    s.layers.push_back(maxpool());
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv2(ch, 7, 7));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
    if (sc < scales)
      s.layers.back().save_as = str("enc", sc);
  }
  for (int64_t sc = scales - 1; sc >= 1; --sc) {
    s.layers.push_back(upsample());
    s.layers.push_back(concat(str("enc", sc)));
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv2(ch, 7, 7));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
  }
  s.layers.push_back(conv2(1, 1, 1));
  s.layers.push_back(relu());
  s.layers.push_back(input_rescaling());
  s.validate();
  return s;
}

NetworkSpec unet3d(int64_t h, int64_t w, int64_t d, int64_t ch1, int64_t ch,
                   int64_t scales) {
  FOE_CHECK(ch % d == 0, "encoder channels ", ch,
            " must be divisible by depth ", d);
  const int64_t c3 = ch / d;
  NetworkSpec s;
  s.name = "unet3d";
  s.input_shape = {1, h, w};
  s.layers.push_back(input_scaling());
  s.layers.push_back(conv2(ch1, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(norm());
  s.layers.push_back(conv2(ch, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(tag_output(norm(), "enc1"));
  for (int64_t sc = 2; sc <= scales; ++sc) {
    s.layers.push_back(maxpool());
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv2(ch, 7, 7));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
    if (sc < scales)
      s.layers.back().save_as = str("enc", sc);
  }
  s.layers.push_back(reshape23(d));
  for (int64_t sc = scales - 1; sc >= 1; --sc) {
    s.layers.push_back(upsample());
    s.layers.push_back(concat(str("enc", sc)));
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv3(c3, 11, 7, 7));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
  }
  s.layers.push_back(conv3(1, 1, 1, 1));
  s.layers.push_back(relu());
  s.layers.push_back(input_rescaling());
  s.validate();
  return s;
}

NetworkSpec fouriernet2d_mini(int64_t h, int64_t w, int64_t fourier_ch) {
  NetworkSpec s = fouriernet2d(h, w, fourier_ch);
  s.name = "fouriernet2d-mini";
  return s;
}

NetworkSpec fouriernet3d_mini(int64_t h, int64_t w, int64_t d) {
  NetworkSpec s;
  s.name = "fouriernet3d-mini";
  s.input_shape = {1, h, w};
  s.layers = {input_scaling(), fourier(2 * d),  leaky(), norm(),
              reshape23(d),    conv3(2, 3, 5, 5), leaky(), norm(),
              conv3(1, 3, 5, 5), relu(),          input_rescaling()};
  s.validate();
  return s;
}

NetworkSpec fourierunet3d_mini(int64_t h, int64_t w, int64_t d) {
  NetworkSpec s;
  s.name = "fourierunet3d-mini";
  s.input_shape = {1, h, w};
  const int64_t levels = 3;
  s.layers.push_back(input_scaling());
  s.layers.push_back(multiscale(2 * d, levels));
  s.layers.push_back(reshape23(d));
  for (int64_t lev = levels - 1; lev >= 1; --lev) {
    s.layers.push_back(upsample());
    s.layers.push_back(concat(str("scale", lev)));
    s.layers.push_back(conv3(2, 3, 5, 5));
    s.layers.push_back(relu());
    s.layers.push_back(norm());
  }
  s.layers.push_back(conv3(1, 1, 1, 1));
  s.layers.push_back(relu());
  s.layers.push_back(input_rescaling());
  s.validate();
  return s;
}

NetworkSpec unet2d_mini(int64_t h, int64_t w, int64_t ch1, int64_t ch) {
  int64_t scales = 1;
  int64_t extent = std::min(h, w);
  while (extent % 2 == 0 && extent > 4 && scales < 4) {
    extent /= 2;
    ++scales;
  }
  NetworkSpec s = unet2d(h, w, ch1, ch, scales);
  s.name = "unet2d-mini";
  return s;
}

NetworkSpec unet3d_mini(int64_t h, int64_t w, int64_t d) {
  NetworkSpec s;
  s.name = "unet3d-mini";
  s.input_shape = {1, h, w};
  const int64_t scales = 3;
  const int64_t ch = 2 * d;
  s.layers.push_back(input_scaling());
  s.layers.push_back(conv2(d, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(norm());
  s.layers.push_back(conv2(ch, 7, 7));
  s.layers.push_back(relu());
  s.layers.push_back(tag_output(norm(), "enc1"));
  for (int64_t sc = 2; sc <= scales; ++sc) {
    s.layers.push_back(maxpool());
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv2(ch, 7, 7));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
    if (sc < scales) s.layers.back().save_as = str("enc", sc);
  }
  s.layers.push_back(reshape23(d));
  for (int64_t sc = scales - 1; sc >= 1; --sc) {
    s.layers.push_back(upsample());
    s.layers.push_back(concat(str("enc", sc)));
    for (int repeat = 0; repeat < 2; ++repeat) {
      s.layers.push_back(conv3(2, 3, 5, 5));
      s.layers.push_back(relu());
      s.layers.push_back(norm());
    }
  }
  s.layers.push_back(conv3(1, 1, 1, 1));
  s.layers.push_back(relu());
  s.layers.push_back(input_rescaling());
  s.validate();
  return s;
}

NetworkSpec by_name(const std::string& name, int64_t h, int64_t w, int64_t d) {
  if (name == "fouriernet2d") return fouriernet2d(h, w);
  if (name == "fouriernet3d") return fouriernet3d(h, w, d);
  if (name == "fourierunet3d") return fourierunet3d(h, w, d);
  if (name == "unet2d") return unet2d(h, w);
  if (name == "unet3d") return unet3d(h, w, d);
  if (name == "fouriernet2d-mini") return fouriernet2d_mini(h, w);
  if (name == "fouriernet3d-mini") return fouriernet3d_mini(h, w, d);
  if (name == "fourierunet3d-mini") return fourierunet3d_mini(h, w, d);
  if (name == "unet2d-mini") return unet2d_mini(h, w);
  if (name == "unet3d-mini") return unet3d_mini(h, w, d);
  throw ValidationError("unknown network preset: " + name);
}

}  // namespace presets

void save_checkpoint(const std::string& dir, const Network& net,
                     const Tensor* phi) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "foe-checkpoint-v1";
  manifest["network"] = nlohmann::json::parse(net.spec().to_json());
  nlohmann::json params = nlohmann::json::array();
  for (size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = net.params()[i];
    const std::string file = str("param_", i, ".fot");
    write_fot(dir + "/" + file, p.value);
    params.push_back({{"name", p.name}, {"file", file}});
  }
  manifest["params"] = params;
  if (phi != nullptr) {
    write_fot(dir + "/phi.fot", *phi);
    manifest["phi"] = "phi.fot";
  }
  std::ofstream os(dir + "/manifest.json");
  FOE_CHECK(bool(os), "cannot write manifest in ", dir);
  os << manifest.dump(2) << "\n";
}

Network load_checkpoint(const std::string& dir, Tensor* phi) {
  std::ifstream is(dir + "/manifest.json");
  FOE_CHECK(bool(is), "cannot read manifest in ", dir);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(str("manifest parse error: ", e.what()));
  }
  FOE_CHECK(manifest.value("format", "") == "foe-checkpoint-v1",
            "unsupported checkpoint format");
  NetworkSpec spec = NetworkSpec::from_json(manifest.at("network").dump());
  Network net = Network::build(spec, 0);
  const auto& params = manifest.at("params");
  FOE_CHECK(params.size() == net.params().size(),
            "checkpoint has ", params.size(), " params, network expects ",
            net.params().size());
  for (size_t i = 0; i < net.params().size(); ++i) {
    const std::string file = params[i].at("file").get<std::string>();
    Tensor value = read_fot(dir + "/" + file);
    FOE_CHECK(same_shape(value.shape(), net.params()[i].value.shape()),
              "checkpoint param ", i, " has shape ", shape_str(value.shape()),
              ", expected ", shape_str(net.params()[i].value.shape()));
    net.params()[i].value = std::move(value);
  }
  if (phi != nullptr && manifest.contains("phi"))
    *phi = read_fot(dir + "/" + manifest.at("phi").get<std::string>());
  return net;
}

}  // namespace foe::net
