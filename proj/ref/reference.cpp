#include "foe_ref/reference.hpp"

#include <cmath>

namespace foe::ref {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

Tensor dft2_ortho(const Tensor& in, bool inverse) {
  const Tensor src = in.is_complex() ? in : in.to_complex();
  const int64_t h = src.dim(-2), w = src.dim(-1);
  const int64_t batch = src.numel() / (h * w);
  const double sign = inverse ? 1.0 : -1.0;
  const double scale = 1.0 / std::sqrt(double(h) * double(w));
  Tensor out = Tensor::zeros(src.shape(), DType::C128);
  for (int64_t b = 0; b < batch; ++b) {
    const cdouble* sp = src.cdata() + b * h * w;
    cdouble* op = out.cdata() + b * h * w;
    for (int64_t ky = 0; ky < h; ++ky)
      for (int64_t kx = 0; kx < w; ++kx) {
        cdouble acc(0, 0);
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            const double phase =
                sign * 2.0 * kPi *
                (double(ky * y) / double(h) + double(kx * x) / double(w));
            acc += sp[y * w + x] * cdouble(std::cos(phase), std::sin(phase));
          }
        op[ky * w + kx] = acc * scale;
      }
  }
  return out;
}

Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ch = kh / 2, cw = kw / 2;
  Tensor y = Tensor::zeros({cout, h, wd}, DType::F64);
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < wd; ++j) {
        double s = bias.rdata()[co];
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
              const int64_t yy = i + u - ch;
              const int64_t xx = j + v - cw;
              if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
              s += w.at(co, ci, u, v) * x.at(ci, yy, xx);
            }
        y.at(co, i, j) = s;
      }
  return y;
}

Tensor conv3d_same(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const int64_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int64_t cd = kd / 2, ch = kh / 2, cw = kw / 2;
  Tensor y = Tensor::zeros({cout, d, h, wd}, DType::F64);
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t z = 0; z < d; ++z)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          double s = bias.rdata()[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t t = 0; t < kd; ++t)
              for (int64_t u = 0; u < kh; ++u)
                for (int64_t v = 0; v < kw; ++v) {
                  const int64_t zz = z + t - cd;
                  const int64_t yy = i + u - ch;
                  const int64_t xx = j + v - cw;
                  if (zz < 0 || zz >= d || yy < 0 || yy >= h || xx < 0 ||
                      xx >= wd)
                    continue;
                  s += w.at(co, ci, t, u, v) * x.at(ci, zz, yy, xx);
                }
          y.at(co, z, i, j) = s;
        }
  return y;
}

Tensor circular_conv2d(const Tensor& x, const Tensor& k) {
  const int64_t h = x.dim(0), w = x.dim(1);
  Tensor y = Tensor::zeros({h, w}, DType::F64);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < h; ++p)
        for (int64_t q = 0; q < w; ++q) {
          const int64_t u = ((i - p) % h + h) % h;
          const int64_t v = ((j - q) % w + w) % w;
          s += x.at(p, q) * k.at(u, v);
        }
      y.at(i, j) = s;
    }
  return y;
}

Tensor linear_conv2d_full(const Tensor& a, const Tensor& b) {
  const int64_t ha = a.dim(0), wa = a.dim(1);
  const int64_t hb = b.dim(0), wb = b.dim(1);
  Tensor y = Tensor::zeros({ha + hb - 1, wa + wb - 1}, DType::F64);
  for (int64_t i = 0; i < ha + hb - 1; ++i)
    for (int64_t j = 0; j < wa + wb - 1; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < ha; ++p)
        for (int64_t q = 0; q < wa; ++q) {
          const int64_t u = i - p;
          const int64_t v = j - q;
          if (u < 0 || u >= hb || v < 0 || v >= wb) continue;
          s += a.at(p, q) * b.at(u, v);
        }
      y.at(i, j) = s;
    }
  return y;
}

Tensor gaussian_blur2d(const Tensor& in, double sigma) {
  const int64_t h = in.dim(-2), w = in.dim(-1);
  const int64_t batch = in.numel() / (h * w);
  const int64_t radius = int64_t(std::ceil(4.0 * sigma));
  const int64_t ksize = 2 * radius + 1;
  std::vector<double> k(size_t(ksize * ksize));
  double total = 0.0;
  for (int64_t u = -radius; u <= radius; ++u)
    for (int64_t v = -radius; v <= radius; ++v) {
      const double val = std::exp(-0.5 * double(u * u + v * v) / (sigma * sigma));
      k[size_t((u + radius) * ksize + v + radius)] = val;
      total += val;
    }
  for (double& v : k) v /= total;

  Tensor out = Tensor::zeros(in.shape(), DType::F64);
  for (int64_t b = 0; b < batch; ++b) {
    const double* sp = in.rdata() + b * h * w;
    double* op = out.rdata() + b * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int64_t u = -radius; u <= radius; ++u)
          for (int64_t v = -radius; v <= radius; ++v) {
            const int64_t yy = y + u, xx = x + v;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            s += k[size_t((u + radius) * ksize + v + radius)] * sp[yy * w + xx];
          }
        op[y * w + x] = s;
      }
  }
  return out;
}

Tensor sum_pool2(const Tensor& in, int64_t factor) {
  const int64_t h = in.dim(-2), w = in.dim(-1);
  const int64_t batch = in.numel() / (h * w);
  const int64_t oh = h / factor, ow = w / factor;
  Shape out_shape = in.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out = Tensor::zeros(out_shape, DType::F64);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int64_t u = 0; u < factor; ++u)
          for (int64_t v = 0; v < factor; ++v)
            s += in.rdata()[b * h * w + (y * factor + u) * w + x * factor + v];
        out.rdata()[b * oh * ow + y * ow + x] = s;
      }
  return out;
}

std::vector<double> adam_scalar_trace(double x0, double lr, double beta1,
                                      double beta2, double eps, int steps,
                                      double (*grad)(double)) {
  std::vector<double> xs;
  double x = x0, m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const double g = grad(x);
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, t));
    const double vhat = v / (1.0 - std::pow(beta2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    xs.push_back(x);
  }
  return xs;
}

}  // namespace foe::ref
