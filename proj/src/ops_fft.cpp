#include <algorithm>
#include <cmath>

#include "foe/fft.hpp"
#include "foe/ops.hpp"

namespace foe::ops {

namespace {

Tape& tape_of(Var v) {
  FOE_CHECK(v.valid(), "operation on an invalid Var");
  return *v.tape;
}

struct Spatial {
  int64_t batch;
  int64_t h;
  int64_t w;
};

Spatial spatial_of(const Tensor& t) {
  FOE_CHECK(t.rank() >= 2, "expected rank >= 2, got shape ",
            shape_str(t.shape()));
  const int64_t h = t.dim(-2);
  const int64_t w = t.dim(-1);
  return {t.numel() / (h * w), h, w};
}

Tensor fft2_value(const Tensor& in, bool inverse) {
  const Spatial sp = spatial_of(in);
  Tensor out = in;
  fft::fft2_ortho(out.cdata(), sp.batch, sp.h, sp.w, inverse);
  return out;
}

Tensor roll2_value(const Tensor& in, int64_t dy, int64_t dx) {
  const Spatial sp = spatial_of(in);
  const int64_t h = sp.h, w = sp.w;
  dy = ((dy % h) + h) % h;
  dx = ((dx % w) + w) % w;
  Tensor out = Tensor::zeros(in.shape(), in.dtype());
  for (int64_t b = 0; b < sp.batch; ++b) {
    const int64_t base = b * h * w;
    for (int64_t y = 0; y < h; ++y) {
      const int64_t ty = (y + dy) % h;
      for (int64_t x = 0; x < w; ++x) {
        const int64_t tx = (x + dx) % w;
        if (in.is_complex())
          out.cdata()[base + ty * w + tx] = in.cdata()[base + y * w + x];
        else
          out.rdata()[base + ty * w + tx] = in.rdata()[base + y * w + x];
      }
    }
  }
  return out;
}

// Frequency retained at output index r of an extent-n crop: DFT standard
// order [0..ceil-1, -floor..-1].
std::vector<int64_t> crop_index_map(int64_t out_n, int64_t in_n) {
  std::vector<int64_t> map(static_cast<size_t>(out_n));
  const int64_t half = out_n / 2;
  for (int64_t r = 0; r < out_n; ++r) {
    const int64_t f = ((r + half) % out_n) - half;
    map[size_t(r)] = ((f % in_n) + in_n) % in_n;
  }
  return map;
}

// Copies a spatial block between two [batch, h, w] buffers.
template <class T>
void copy_block(const T* src, int64_t src_h, int64_t src_w, int64_t sy,
                int64_t sx, T* dst, int64_t dst_h, int64_t dst_w, int64_t dy,
                int64_t dx, int64_t bh, int64_t bw, int64_t batch,
                bool accumulate) {
  for (int64_t b = 0; b < batch; ++b) {
    const T* sbase = src + b * src_h * src_w;
    T* dbase = dst + b * dst_h * dst_w;
    for (int64_t y = 0; y < bh; ++y) {
      const T* srow = sbase + (sy + y) * src_w + sx;
      T* drow = dbase + (dy + y) * dst_w + dx;
      if (accumulate)
        for (int64_t x = 0; x < bw; ++x) drow[x] += srow[x];
      else
        std::copy(srow, srow + bw, drow);
    }
  }
}

Tensor embed_value(const Tensor& in, int64_t th, int64_t tw, int64_t oy,
                   int64_t ox) {
  const Spatial sp = spatial_of(in);
  FOE_CHECK(oy >= 0 && ox >= 0 && oy + sp.h <= th && ox + sp.w <= tw,
            "pad target ", th, "x", tw, " cannot hold ", sp.h, "x", sp.w,
            " at offset (", oy, ", ", ox, ")");
  Shape out_shape = in.shape();
  out_shape[out_shape.size() - 2] = th;
  out_shape[out_shape.size() - 1] = tw;
  Tensor out = Tensor::zeros(out_shape, in.dtype());
  if (in.is_complex())
    copy_block(in.cdata(), sp.h, sp.w, 0, 0, out.cdata(), th, tw, oy, ox, sp.h,
               sp.w, sp.batch, false);
  else
    copy_block(in.rdata(), sp.h, sp.w, 0, 0, out.rdata(), th, tw, oy, ox, sp.h,
               sp.w, sp.batch, false);
  return out;
}

Tensor extract_value(const Tensor& in, int64_t oy, int64_t ox, int64_t oh,
                     int64_t ow) {
  const Spatial sp = spatial_of(in);
  FOE_CHECK(oy >= 0 && ox >= 0 && oy + oh <= sp.h && ox + ow <= sp.w,
            "crop window ", oh, "x", ow, " at (", oy, ", ", ox,
            ") exceeds input ", sp.h, "x", sp.w);
  Shape out_shape = in.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out = Tensor::zeros(out_shape, in.dtype());
  if (in.is_complex())
    copy_block(in.cdata(), sp.h, sp.w, oy, ox, out.cdata(), oh, ow, 0, 0, oh,
               ow, sp.batch, false);
  else
    copy_block(in.rdata(), sp.h, sp.w, oy, ox, out.rdata(), oh, ow, 0, 0, oh,
               ow, sp.batch, false);
  return out;
}

}  // namespace

Var fft2(Var a, bool inverse) {
  Tape* t = a.tape;
  if (!t->value(a).is_complex()) a = to_complex(a);
  const Tensor& va = t->value(a);
  Tensor out = fft2_value(va, inverse);
  return t->record(std::move(out), {a},
                   [aid = a.id, inverse](Tape& tp, const Tensor& g) {
                     tp.accumulate_grad(aid, fft2_value(g, !inverse));
                   });
}

Var roll2(Var a, int64_t dy, int64_t dx) {
  Tape& t = tape_of(a);
  Tensor out = roll2_value(t.value(a), dy, dx);
  return t.record(std::move(out), {a},
                  [aid = a.id, dy, dx](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, roll2_value(g, -dy, -dx));
                  });
}

Var fftshift2(Var a) {
  const Spatial sp = spatial_of(tape_of(a).value(a));
  return roll2(a, sp.h / 2, sp.w / 2);
}

Var ifftshift2(Var a) {
  const Spatial sp = spatial_of(tape_of(a).value(a));
  return roll2(a, -(sp.h / 2), -(sp.w / 2));
}

Var spectral_crop(Var a, int64_t out_h, int64_t out_w) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(va.is_complex(), "spectral_crop expects a complex spectrum");
  const Spatial sp = spatial_of(va);
  FOE_CHECK(out_h >= 1 && out_w >= 1 && out_h <= sp.h && out_w <= sp.w,
            "spectral_crop ", out_h, "x", out_w, " exceeds spectrum ", sp.h,
            "x", sp.w);
  const auto row_map = crop_index_map(out_h, sp.h);
  const auto col_map = crop_index_map(out_w, sp.w);
  const double s =
      std::sqrt(double(out_h * out_w) / double(sp.h * sp.w));
  Shape out_shape = va.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor out = Tensor::zeros(out_shape, DType::C128);
  for (int64_t b = 0; b < sp.batch; ++b) {
    const cdouble* src = va.cdata() + b * sp.h * sp.w;
    cdouble* dst = out.cdata() + b * out_h * out_w;
    for (int64_t r = 0; r < out_h; ++r)
      for (int64_t c = 0; c < out_w; ++c)
        dst[r * out_w + c] = s * src[row_map[size_t(r)] * sp.w + col_map[size_t(c)]];
  }
  const Shape in_shape = va.shape();
  const int64_t in_h = sp.h, in_w = sp.w, batch = sp.batch;
  return t.record(
      std::move(out), {a},
      [aid = a.id, row_map, col_map, s, in_shape, in_h, in_w, batch, out_h,
       out_w](Tape& tp, const Tensor& g) {
        Tensor ga = Tensor::zeros(in_shape, DType::C128);
        for (int64_t b = 0; b < batch; ++b) {
          cdouble* dst = ga.cdata() + b * in_h * in_w;
          const cdouble* src = g.cdata() + b * out_h * out_w;
          for (int64_t r = 0; r < out_h; ++r)
            for (int64_t c = 0; c < out_w; ++c)
              dst[row_map[size_t(r)] * in_w + col_map[size_t(c)]] +=
                  s * src[r * out_w + c];
        }
        tp.accumulate_grad(aid, ga);
      });
}

Var pad2_at(Var a, int64_t target_h, int64_t target_w, int64_t oy, int64_t ox) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  const Spatial sp = spatial_of(va);
  Tensor out = embed_value(va, target_h, target_w, oy, ox);
  const int64_t h = sp.h, w = sp.w;
  return t.record(std::move(out), {a},
                  [aid = a.id, oy, ox, h, w](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, extract_value(g, oy, ox, h, w));
                  });
}

Var crop2_at(Var a, int64_t oy, int64_t ox, int64_t out_h, int64_t out_w) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  const Spatial sp = spatial_of(va);
  Tensor out = extract_value(va, oy, ox, out_h, out_w);
  const int64_t h = sp.h, w = sp.w;
  return t.record(std::move(out), {a},
                  [aid = a.id, oy, ox, h, w](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, embed_value(g, h, w, oy, ox));
                  });
}

Var pad2(Var a, int64_t target_h, int64_t target_w) {
  const Spatial sp = spatial_of(tape_of(a).value(a));
  FOE_CHECK(target_h >= sp.h && target_w >= sp.w, "zero_pad must grow: ",
            sp.h, "x", sp.w, " -> ", target_h, "x", target_w);
  return pad2_at(a, target_h, target_w, (target_h - sp.h) / 2,
                 (target_w - sp.w) / 2);
}

Var crop2(Var a, int64_t target_h, int64_t target_w) {
  const Spatial sp = spatial_of(tape_of(a).value(a));
  FOE_CHECK(target_h <= sp.h && target_w <= sp.w, "center_crop must shrink: ",
            sp.h, "x", sp.w, " -> ", target_h, "x", target_w);
  return crop2_at(a, (sp.h - target_h) / 2, (sp.w - target_w) / 2, target_h,
                  target_w);
}

Var pad_crop_spatial(Var a, int64_t target_h, int64_t target_w,
                     PadCropMode mode) {
  return mode == PadCropMode::ZeroPad ? pad2(a, target_h, target_w)
                                      : crop2(a, target_h, target_w);
}

Var sum_pool2(Var a, int64_t factor) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "sum_pool2 expects a real tensor");
  FOE_CHECK(factor >= 1, "pool factor must be >= 1");
  const Spatial sp = spatial_of(va);
  FOE_CHECK(sp.h % factor == 0 && sp.w % factor == 0, "spatial extents ",
            sp.h, "x", sp.w, " not divisible by pool factor ", factor);
  const int64_t oh = sp.h / factor, ow = sp.w / factor;
  Shape out_shape = va.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out = Tensor::zeros(out_shape, DType::F64);
  for (int64_t b = 0; b < sp.batch; ++b) {
    const double* src = va.rdata() + b * sp.h * sp.w;
    double* dst = out.rdata() + b * oh * ow;
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int64_t u = 0; u < factor; ++u)
          for (int64_t v = 0; v < factor; ++v)
            s += src[(y * factor + u) * sp.w + x * factor + v];
        dst[y * ow + x] = s;
      }
  }
  const Shape in_shape = va.shape();
  const int64_t h = sp.h, w = sp.w, batch = sp.batch;
  return t.record(std::move(out), {a},
                  [aid = a.id, in_shape, factor, h, w, batch, oh,
                   ow](Tape& tp, const Tensor& g) {
                    Tensor ga = Tensor::zeros(in_shape, DType::F64);
                    for (int64_t b = 0; b < batch; ++b) {
                      double* dst = ga.rdata() + b * h * w;
                      const double* src = g.rdata() + b * oh * ow;
                      for (int64_t y = 0; y < h; ++y)
                        for (int64_t x = 0; x < w; ++x)
                          dst[y * w + x] = src[(y / factor) * ow + x / factor];
                    }
                    tp.accumulate_grad(aid, ga);
                  });
}

Var upsample_nearest2(Var a, int64_t factor) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "upsample_nearest2 expects a real tensor");
  FOE_CHECK(factor >= 1, "upsample factor must be >= 1");
  const Spatial sp = spatial_of(va);
  const int64_t oh = sp.h * factor, ow = sp.w * factor;
  Shape out_shape = va.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out = Tensor::zeros(out_shape, DType::F64);
  for (int64_t b = 0; b < sp.batch; ++b) {
    const double* src = va.rdata() + b * sp.h * sp.w;
    double* dst = out.rdata() + b * oh * ow;
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x)
        dst[y * ow + x] = src[(y / factor) * sp.w + x / factor];
  }
  const Shape in_shape = va.shape();
  const int64_t h = sp.h, w = sp.w, batch = sp.batch;
  return t.record(std::move(out), {a},
                  [aid = a.id, in_shape, factor, h, w, batch, oh,
                   ow](Tape& tp, const Tensor& g) {
                    Tensor ga = Tensor::zeros(in_shape, DType::F64);
                    for (int64_t b = 0; b < batch; ++b) {
                      double* dst = ga.rdata() + b * h * w;
                      const double* src = g.rdata() + b * oh * ow;
                      for (int64_t y = 0; y < oh; ++y)
                        for (int64_t x = 0; x < ow; ++x)
                          dst[(y / factor) * w + x / factor] +=
                              src[y * ow + x];
                    }
                    tp.accumulate_grad(aid, ga);
                  });
}

Var pool_resample(Var a, int64_t factor, PoolMode mode) {
  return mode == PoolMode::SumPool ? sum_pool2(a, factor)
                                   : upsample_nearest2(a, factor);
}

Var max_pool2(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "max_pool2 expects a real tensor");
  const Spatial sp = spatial_of(va);
  FOE_CHECK(sp.h % 2 == 0 && sp.w % 2 == 0,
            "max_pool2 needs even extents, got ", sp.h, "x", sp.w);
  const int64_t oh = sp.h / 2, ow = sp.w / 2;
  Shape out_shape = va.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out = Tensor::zeros(out_shape, DType::F64);
  std::vector<int64_t> argmax(size_t(out.numel()));
  for (int64_t b = 0; b < sp.batch; ++b) {
    const double* src = va.rdata() + b * sp.h * sp.w;
    double* dst = out.rdata() + b * oh * ow;
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        int64_t best_idx = (2 * y) * sp.w + 2 * x;
        double best = src[best_idx];
        for (int64_t u = 0; u < 2; ++u)
          for (int64_t v = 0; v < 2; ++v) {
            const int64_t idx = (2 * y + u) * sp.w + 2 * x + v;
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        dst[y * ow + x] = best;
        argmax[size_t(b * oh * ow + y * ow + x)] = b * sp.h * sp.w + best_idx;
      }
  }
  const Shape in_shape = va.shape();
  return t.record(std::move(out), {a},
                  [aid = a.id, in_shape, argmax](Tape& tp, const Tensor& g) {
                    Tensor ga = Tensor::zeros(in_shape, DType::F64);
                    for (int64_t i = 0; i < g.numel(); ++i)
                      ga.rdata()[argmax[size_t(i)]] += g.rdata()[i];
                    tp.accumulate_grad(aid, ga);
                  });
}

}  // namespace foe::ops
