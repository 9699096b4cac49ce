#include <algorithm>
#include <cmath>

#include "foe/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace foe::ops {

namespace {

Tape& tape_of(Var v) {
  FOE_CHECK(v.valid(), "operation on an invalid Var");
  return *v.tape;
}

// y[co,i,j] = b[co] + sum_ci sum_uv w[co,ci,u,v] x[ci,i+u-ch,j+v-cw]
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ch = kh / 2, cw = kw / 2;
  Tensor y = Tensor::zeros({cout, h, wd}, DType::F64);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t co = 0; co < cout; ++co) {
    double* yp = y.rdata() + co * h * wd;
    const double bias = b.rdata()[co];
    for (int64_t i = 0; i < h * wd; ++i) yp[i] = bias;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* xp = x.rdata() + ci * h * wd;
      const double* wp = w.rdata() + (co * cin + ci) * kh * kw;
      for (int64_t u = 0; u < kh; ++u) {
        const int64_t dy = u - ch;
        const int64_t i0 = std::max<int64_t>(0, -dy);
        const int64_t i1 = std::min<int64_t>(h, h - dy);
        for (int64_t v = 0; v < kw; ++v) {
          const double wv = wp[u * kw + v];
          if (wv == 0.0) continue;
          const int64_t dx = v - cw;
          const int64_t j0 = std::max<int64_t>(0, -dx);
          const int64_t j1 = std::min<int64_t>(wd, wd - dx);
          for (int64_t i = i0; i < i1; ++i) {
            double* yrow = yp + i * wd;
            const double* xrow = xp + (i + dy) * wd + dx;
            for (int64_t j = j0; j < j1; ++j) yrow[j] += wv * xrow[j];
          }
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ch = kh / 2, cw = kw / 2;
  gx = Tensor::zeros(x.shape(), DType::F64);
  gw = Tensor::zeros(w.shape(), DType::F64);
  gb = Tensor::zeros({cout}, DType::F64);

  for (int64_t co = 0; co < cout; ++co) {
    const double* gp = g.rdata() + co * h * wd;
    double s = 0.0;
    for (int64_t i = 0; i < h * wd; ++i) s += gp[i];
    gb.rdata()[co] = s;
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t ci = 0; ci < cin; ++ci) {
    double* gxp = gx.rdata() + ci * h * wd;
    for (int64_t co = 0; co < cout; ++co) {
      const double* gp = g.rdata() + co * h * wd;
      const double* wp = w.rdata() + (co * cin + ci) * kh * kw;
      for (int64_t u = 0; u < kh; ++u) {
        const int64_t dy = u - ch;
        const int64_t i0 = std::max<int64_t>(0, -dy);
        const int64_t i1 = std::min<int64_t>(h, h - dy);
        for (int64_t v = 0; v < kw; ++v) {
          const double wv = wp[u * kw + v];
          if (wv == 0.0) continue;
          const int64_t dx = v - cw;
          const int64_t j0 = std::max<int64_t>(0, -dx);
          const int64_t j1 = std::min<int64_t>(wd, wd - dx);
          for (int64_t i = i0; i < i1; ++i) {
            double* gxrow = gxp + (i + dy) * wd + dx;
            const double* grow = gp + i * wd;
            for (int64_t j = j0; j < j1; ++j) gxrow[j] += wv * grow[j];
          }
        }
      }
    }
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t co = 0; co < cout; ++co) {
    const double* gp = g.rdata() + co * h * wd;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* xp = x.rdata() + ci * h * wd;
      double* gwp = gw.rdata() + (co * cin + ci) * kh * kw;
      for (int64_t u = 0; u < kh; ++u) {
        const int64_t dy = u - ch;
        const int64_t i0 = std::max<int64_t>(0, -dy);
        const int64_t i1 = std::min<int64_t>(h, h - dy);
        for (int64_t v = 0; v < kw; ++v) {
          const int64_t dx = v - cw;
          const int64_t j0 = std::max<int64_t>(0, -dx);
          const int64_t j1 = std::min<int64_t>(wd, wd - dx);
          double s = 0.0;
          for (int64_t i = i0; i < i1; ++i) {
            const double* grow = gp + i * wd;
            const double* xrow = xp + (i + dy) * wd + dx;
            for (int64_t j = j0; j < j1; ++j) s += grow[j] * xrow[j];
          }
          gwp[u * kw + v] = s;
        }
      }
    }
  }
}

Tensor conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int64_t cd = kd / 2, ch = kh / 2, cw = kw / 2;
  Tensor y = Tensor::zeros({cout, d, h, wd}, DType::F64);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t co = 0; co < cout; ++co) {
    double* yp = y.rdata() + co * d * h * wd;
    const double bias = b.rdata()[co];
    for (int64_t i = 0; i < d * h * wd; ++i) yp[i] = bias;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* xp = x.rdata() + ci * d * h * wd;
      const double* wp = w.rdata() + (co * cin + ci) * kd * kh * kw;
      for (int64_t t = 0; t < kd; ++t) {
        const int64_t dz = t - cd;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = std::min<int64_t>(d, d - dz);
        for (int64_t u = 0; u < kh; ++u) {
          const int64_t dy = u - ch;
          const int64_t i0 = std::max<int64_t>(0, -dy);
          const int64_t i1 = std::min<int64_t>(h, h - dy);
          for (int64_t v = 0; v < kw; ++v) {
            const double wv = wp[(t * kh + u) * kw + v];
            if (wv == 0.0) continue;
            const int64_t dx = v - cw;
            const int64_t j0 = std::max<int64_t>(0, -dx);
            const int64_t j1 = std::min<int64_t>(wd, wd - dx);
            for (int64_t z = z0; z < z1; ++z)
              for (int64_t i = i0; i < i1; ++i) {
                double* yrow = yp + (z * h + i) * wd;
                const double* xrow = xp + ((z + dz) * h + i + dy) * wd + dx;
                for (int64_t j = j0; j < j1; ++j) yrow[j] += wv * xrow[j];
              }
          }
        }
      }
    }
  }
  return y;
}

void conv3d_backward(const Tensor& x, const Tensor& w, const Tensor& g,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
  const int64_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int64_t cd = kd / 2, ch = kh / 2, cw = kw / 2;
  gx = Tensor::zeros(x.shape(), DType::F64);
  gw = Tensor::zeros(w.shape(), DType::F64);
  gb = Tensor::zeros({cout}, DType::F64);

  for (int64_t co = 0; co < cout; ++co) {
    const double* gp = g.rdata() + co * d * h * wd;
    double s = 0.0;
    for (int64_t i = 0; i < d * h * wd; ++i) s += gp[i];
    gb.rdata()[co] = s;
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t ci = 0; ci < cin; ++ci) {
    double* gxp = gx.rdata() + ci * d * h * wd;
    for (int64_t co = 0; co < cout; ++co) {
      const double* gp = g.rdata() + co * d * h * wd;
      const double* wp = w.rdata() + (co * cin + ci) * kd * kh * kw;
      for (int64_t t = 0; t < kd; ++t) {
        const int64_t dz = t - cd;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = std::min<int64_t>(d, d - dz);
        for (int64_t u = 0; u < kh; ++u) {
          const int64_t dy = u - ch;
          const int64_t i0 = std::max<int64_t>(0, -dy);
          const int64_t i1 = std::min<int64_t>(h, h - dy);
          for (int64_t v = 0; v < kw; ++v) {
            const double wv = wp[(t * kh + u) * kw + v];
            if (wv == 0.0) continue;
            const int64_t dx = v - cw;
            const int64_t j0 = std::max<int64_t>(0, -dx);
            const int64_t j1 = std::min<int64_t>(wd, wd - dx);
            for (int64_t z = z0; z < z1; ++z)
              for (int64_t i = i0; i < i1; ++i) {
                double* gxrow = gxp + ((z + dz) * h + i + dy) * wd + dx;
                const double* grow = gp + (z * h + i) * wd;
                for (int64_t j = j0; j < j1; ++j) gxrow[j] += wv * grow[j];
              }
          }
        }
      }
    }
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t co = 0; co < cout; ++co) {
    const double* gp = g.rdata() + co * d * h * wd;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* xp = x.rdata() + ci * d * h * wd;
      double* gwp = gw.rdata() + (co * cin + ci) * kd * kh * kw;
      for (int64_t t = 0; t < kd; ++t) {
        const int64_t dz = t - cd;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = std::min<int64_t>(d, d - dz);
        for (int64_t u = 0; u < kh; ++u) {
          const int64_t dy = u - ch;
          const int64_t i0 = std::max<int64_t>(0, -dy);
          const int64_t i1 = std::min<int64_t>(h, h - dy);
          for (int64_t v = 0; v < kw; ++v) {
            const int64_t dx = v - cw;
            const int64_t j0 = std::max<int64_t>(0, -dx);
            const int64_t j1 = std::min<int64_t>(wd, wd - dx);
            double s = 0.0;
            for (int64_t z = z0; z < z1; ++z)
              for (int64_t i = i0; i < i1; ++i) {
                const double* grow = gp + (z * h + i) * wd;
                const double* xrow = xp + ((z + dz) * h + i + dy) * wd + dx;
                for (int64_t j = j0; j < j1; ++j) s += grow[j] * xrow[j];
              }
            gwp[(t * kh + u) * kw + v] = s;
          }
        }
      }
    }
  }
}

std::vector<double> gaussian_kernel(double sigma) {
  const int64_t radius = int64_t(std::ceil(4.0 * sigma));
  std::vector<double> k(size_t(2 * radius + 1));
  double total = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    k[size_t(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable blur over the last two axes, zero boundary.
Tensor blur_value(const Tensor& in, const std::vector<double>& k) {
  const int64_t h = in.dim(-2), w = in.dim(-1);
  const int64_t batch = in.numel() / (h * w);
  const int64_t radius = int64_t(k.size() / 2);
  Tensor tmp = Tensor::zeros(in.shape(), DType::F64);
  Tensor out = Tensor::zeros(in.shape(), DType::F64);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = in.rdata() + b * h * w;
    double* mid = tmp.rdata() + b * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        const int64_t lo = std::max<int64_t>(-radius, -x);
        const int64_t hi = std::min<int64_t>(radius, w - 1 - x);
        for (int64_t t = lo; t <= hi; ++t)
          s += k[size_t(t + radius)] * src[y * w + x + t];
        mid[y * w + x] = s;
      }
    double* dst = out.rdata() + b * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        const int64_t lo = std::max<int64_t>(-radius, -y);
        const int64_t hi = std::min<int64_t>(radius, h - 1 - y);
        for (int64_t t = lo; t <= hi; ++t)
          s += k[size_t(t + radius)] * mid[(y + t) * w + x];
        dst[y * w + x] = s;
      }
  }
  return out;
}

}  // namespace

Var conv2d(Var x, Var w, Var bias) {
  Tape& t = tape_of(x);
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  const Tensor& vb = t.value(bias);
  FOE_CHECK(vx.rank() == 3, "conv2d input must be [Cin, H, W], got ",
            shape_str(vx.shape()));
  FOE_CHECK(vw.rank() == 4, "conv2d kernel must be [Cout, Cin, kh, kw], got ",
            shape_str(vw.shape()));
  FOE_CHECK(vw.dim(2) % 2 == 1 && vw.dim(3) % 2 == 1,
            "conv2d kernel extents must be odd, got ", vw.dim(2), "x",
            vw.dim(3));
  FOE_CHECK(vw.dim(1) == vx.dim(0), "conv2d: kernel expects ", vw.dim(1),
            " input channels, input has ", vx.dim(0));
  FOE_CHECK(vb.rank() == 1 && vb.dim(0) == vw.dim(0),
            "conv2d: bias must be [Cout]");
  Tensor y = conv2d_forward(vx, vw, vb);
  return t.record(std::move(y), {x, w, bias},
                  [x, w, bias](Tape& tp, const Tensor& g) {
                    Tensor gx, gw, gb;
                    conv2d_backward(tp.value(x), tp.value(w), g, gx, gw, gb);
                    tp.accumulate_grad(x.id, gx);
                    tp.accumulate_grad(w.id, gw);
                    tp.accumulate_grad(bias.id, gb);
                  });
}

Var conv3d(Var x, Var w, Var bias) {
  Tape& t = tape_of(x);
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  const Tensor& vb = t.value(bias);
  FOE_CHECK(vx.rank() == 4, "conv3d input must be [Cin, D, H, W], got ",
            shape_str(vx.shape()));
  FOE_CHECK(vw.rank() == 5, "conv3d kernel must be [Cout, Cin, kd, kh, kw]");
  FOE_CHECK(vw.dim(2) % 2 == 1 && vw.dim(3) % 2 == 1 && vw.dim(4) % 2 == 1,
            "conv3d kernel extents must be odd");
  FOE_CHECK(vw.dim(1) == vx.dim(0), "conv3d: channel mismatch");
  FOE_CHECK(vb.rank() == 1 && vb.dim(0) == vw.dim(0),
            "conv3d: bias must be [Cout]");
  Tensor y = conv3d_forward(vx, vw, vb);
  return t.record(std::move(y), {x, w, bias},
                  [x, w, bias](Tape& tp, const Tensor& g) {
                    Tensor gx, gw, gb;
                    conv3d_backward(tp.value(x), tp.value(w), g, gx, gw, gb);
                    tp.accumulate_grad(x.id, gx);
                    tp.accumulate_grad(w.id, gw);
                    tp.accumulate_grad(bias.id, gb);
                  });
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  const Tensor& vx = t.value(x);
  const Tensor& vg = t.value(gamma);
  const Tensor& vb = t.value(beta);
  FOE_CHECK(!vx.is_complex(), "instance_norm expects a real tensor");
  FOE_CHECK(vx.rank() >= 2, "instance_norm input must be [C, ...spatial]");
  const int64_t c = vx.dim(0);
  const int64_t n = vx.numel() / c;
  FOE_CHECK(n >= 1, "instance_norm needs at least one spatial element");
  FOE_CHECK(vg.rank() == 1 && vg.dim(0) == c && vb.rank() == 1 &&
                vb.dim(0) == c,
            "instance_norm: gamma/beta must be [C]");

  std::vector<double> mean(static_cast<size_t>(c));
  std::vector<double> inv_std(static_cast<size_t>(c));
  Tensor y = Tensor::zeros(vx.shape(), DType::F64);
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* xp = vx.rdata() + ch * n;
    double m = 0.0;
    for (int64_t i = 0; i < n; ++i) m += xp[i];
    m /= double(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) var += (xp[i] - m) * (xp[i] - m);
    var /= double(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[size_t(ch)] = m;
    inv_std[size_t(ch)] = inv;
    double* yp = y.rdata() + ch * n;
    const double gc = vg.rdata()[ch], bc = vb.rdata()[ch];
    for (int64_t i = 0; i < n; ++i) yp[i] = gc * (xp[i] - m) * inv + bc;
  }
  return t.record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mean, inv_std, c, n](Tape& tp, const Tensor& g) {
        const Tensor& vx = tp.value(x);
        const Tensor& vg = tp.value(gamma);
        Tensor gx = Tensor::zeros(vx.shape(), DType::F64);
        Tensor gg = Tensor::zeros({c}, DType::F64);
        Tensor gb = Tensor::zeros({c}, DType::F64);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* xp = vx.rdata() + ch * n;
          const double* gp = g.rdata() + ch * n;
          double* gxp = gx.rdata() + ch * n;
          const double m = mean[size_t(ch)];
          const double inv = inv_std[size_t(ch)];
          const double gc = vg.rdata()[ch];
          double sum_g = 0.0, sum_gx = 0.0, sum_gxhat = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            const double xhat = (xp[i] - m) * inv;
            sum_g += gp[i];
            sum_gx += gp[i] * xhat;
            sum_gxhat += gp[i] * gc * xhat;
          }
          gg.rdata()[ch] = sum_gx;
          gb.rdata()[ch] = sum_g;
          const double mean_gh = gc * sum_g / double(n);
          const double mean_ghx = sum_gxhat / double(n);
          for (int64_t i = 0; i < n; ++i) {
            const double xhat = (xp[i] - m) * inv;
            gxp[i] = inv * (gc * gp[i] - mean_gh - xhat * mean_ghx);
          }
        }
        tp.accumulate_grad(x.id, gx);
        tp.accumulate_grad(gamma.id, gg);
        tp.accumulate_grad(beta.id, gb);
      });
}

Var gaussian_blur2d(Var a, double sigma) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "gaussian_blur2d expects a real tensor");
  FOE_CHECK(sigma > 0.0, "blur sigma must be positive");
  const auto kernel = gaussian_kernel(sigma);
  Tensor out = blur_value(va, kernel);
  // Symmetric zero-padded kernel: the adjoint is the same blur.
  return t.record(std::move(out), {a},
                  [aid = a.id, kernel](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, blur_value(g, kernel));
                  });
}

}  // namespace foe::ops
