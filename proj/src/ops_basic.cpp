#include <algorithm>
#include <cmath>
#include <numeric>

#include "foe/ops.hpp"

namespace foe::ops {

namespace {

Tape& tape_of(Var v) {
  FOE_CHECK(v.valid(), "operation on an invalid Var");
  return *v.tape;
}

void check_same_tape(Var a, Var b) {
  FOE_CHECK(a.tape == b.tape, "operands live on different tapes");
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// Reduces a full-shape gradient to the scalar operand's shape.
Tensor reduce_to_scalar(const Tensor& g, const Shape& scalar_shape) {
  Tensor out = Tensor::zeros(scalar_shape, g.dtype());
  if (g.is_complex()) {
    cdouble s = 0;
    for (int64_t i = 0; i < g.numel(); ++i) s += g.cdata()[i];
    out.cdata()[0] = s;
  } else {
    out.rdata()[0] = g.sum();
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  FOE_CHECK(va.dtype() == vb.dtype(), "add: dtype mismatch");
  const bool sa = is_scalar(va), sb = is_scalar(vb);
  FOE_CHECK(sa || sb || same_shape(va.shape(), vb.shape()),
            "add: shape mismatch ", shape_str(va.shape()), " vs ",
            shape_str(vb.shape()));
  const Tensor& big = sa ? vb : va;
  Tensor out = Tensor::zeros(big.shape(), big.dtype());
  const int64_t n = out.numel();
  if (out.is_complex()) {
    for (int64_t i = 0; i < n; ++i)
      out.cdata()[i] = va.cdata()[sa ? 0 : i] + vb.cdata()[sb ? 0 : i];
  } else {
    for (int64_t i = 0; i < n; ++i)
      out.rdata()[i] = va.rdata()[sa ? 0 : i] + vb.rdata()[sb ? 0 : i];
  }
  const Shape shape_a = va.shape(), shape_b = vb.shape();
  return t.record(std::move(out), {a, b},
                  [aid = a.id, bid = b.id, sa, sb, shape_a, shape_b](
                      Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, sa ? reduce_to_scalar(g, shape_a) : g);
                    tp.accumulate_grad(bid, sb ? reduce_to_scalar(g, shape_b) : g);
                  });
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var neg(Var a) { return scale(a, -1.0); }

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  const bool sa = is_scalar(va), sb = is_scalar(vb);
  FOE_CHECK(va.dtype() == vb.dtype(), "mul: dtype mismatch (use rcmul)");
  FOE_CHECK(sa || sb || same_shape(va.shape(), vb.shape()),
            "mul: shape mismatch ", shape_str(va.shape()), " vs ",
            shape_str(vb.shape()));
  const Tensor& big = sa ? vb : va;
  Tensor out = Tensor::zeros(big.shape(), big.dtype());
  const int64_t n = out.numel();
  if (out.is_complex()) {
    for (int64_t i = 0; i < n; ++i)
      out.cdata()[i] = va.cdata()[sa ? 0 : i] * vb.cdata()[sb ? 0 : i];
  } else {
    for (int64_t i = 0; i < n; ++i)
      out.rdata()[i] = va.rdata()[sa ? 0 : i] * vb.rdata()[sb ? 0 : i];
  }
  return t.record(
      std::move(out), {a, b},
      [a, b, sa, sb](Tape& tp, const Tensor& g) {
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        const int64_t n = g.numel();
        Tensor ga = Tensor::zeros(va.shape(), va.dtype());
        Tensor gb = Tensor::zeros(vb.shape(), vb.dtype());
        if (g.is_complex()) {
          // Pair convention: d/dz of z*w is multiplication by conj(w).
          for (int64_t i = 0; i < n; ++i) {
            const cdouble gi = g.cdata()[i];
            ga.cdata()[sa ? 0 : i] += std::conj(vb.cdata()[sb ? 0 : i]) * gi;
            gb.cdata()[sb ? 0 : i] += std::conj(va.cdata()[sa ? 0 : i]) * gi;
          }
        } else {
          for (int64_t i = 0; i < n; ++i) {
            const double gi = g.rdata()[i];
            ga.rdata()[sa ? 0 : i] += vb.rdata()[sb ? 0 : i] * gi;
            gb.rdata()[sb ? 0 : i] += va.rdata()[sa ? 0 : i] * gi;
          }
        }
        tp.accumulate_grad(a.id, ga);
        tp.accumulate_grad(b.id, gb);
      });
}

Var cmul(Var a, Var b) {
  FOE_CHECK(tape_of(a).value(a).is_complex() && tape_of(b).value(b).is_complex(),
            "cmul expects complex operands");
  return mul(a, b);
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  Tensor out = va;
  if (out.is_complex()) {
    for (int64_t i = 0; i < out.numel(); ++i) out.cdata()[i] *= s;
  } else {
    for (int64_t i = 0; i < out.numel(); ++i) out.rdata()[i] *= s;
  }
  return t.record(std::move(out), {a}, [aid = a.id, s](Tape& tp, const Tensor& g) {
    Tensor gs = g;
    if (gs.is_complex()) {
      for (int64_t i = 0; i < gs.numel(); ++i) gs.cdata()[i] *= s;
    } else {
      for (int64_t i = 0; i < gs.numel(); ++i) gs.rdata()[i] *= s;
    }
    tp.accumulate_grad(aid, gs);
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = t.value(a);
  FOE_CHECK(!out.is_complex(), "add_scalar expects a real tensor");
  for (int64_t i = 0; i < out.numel(); ++i) out.rdata()[i] += s;
  return t.record(std::move(out), {a}, [aid = a.id](Tape& tp, const Tensor& g) {
    tp.accumulate_grad(aid, g);
  });
}

namespace {

// Real unary op with elementwise derivative computed from the input.
template <class ValueFn, class DerivFn>
Var real_unary(Var a, ValueFn vf, DerivFn df) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "elementwise op expects a real tensor");
  Tensor out = Tensor::zeros(va.shape(), DType::F64);
  for (int64_t i = 0; i < va.numel(); ++i) out.rdata()[i] = vf(va.rdata()[i]);
  return t.record(std::move(out), {a}, [a, df](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor gx = Tensor::zeros(x.shape(), DType::F64);
    for (int64_t i = 0; i < x.numel(); ++i)
      gx.rdata()[i] = g.rdata()[i] * df(x.rdata()[i]);
    tp.accumulate_grad(a.id, gx);
  });
}

}  // namespace

Var relu(Var a) {
  return real_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x >= 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return real_unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x) { return x >= 0.0 ? 1.0 : slope; });
}

Var sqrt_(Var a) {
  const Tensor& va = tape_of(a).value(a);
  FOE_CHECK(!va.is_complex(), "sqrt expects a real tensor");
  for (int64_t i = 0; i < va.numel(); ++i)
    FOE_NUMERIC_CHECK(va.rdata()[i] >= 0.0, "sqrt of negative value ",
                      va.rdata()[i]);
  return real_unary(
      a, [](double x) { return std::sqrt(x); },
      [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(Var a) {
  return real_unary(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var recip(Var a) {
  return real_unary(
      a, [](double x) { return 1.0 / x; },
      [](double x) { return -1.0 / (x * x); });
}

Var to_complex(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  if (va.is_complex()) return a;
  return t.record(va.to_complex(), {a}, [aid = a.id](Tape& tp, const Tensor& g) {
    tp.accumulate_grad(aid, g.real_part());
  });
}

Var real_part(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(va.is_complex(), "real_part expects a complex tensor");
  return t.record(va.real_part(), {a}, [aid = a.id](Tape& tp, const Tensor& g) {
    tp.accumulate_grad(aid, g.to_complex());
  });
}

Var abs2(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(va.is_complex(), "abs2 expects a complex tensor");
  Tensor out = Tensor::zeros(va.shape(), DType::F64);
  for (int64_t i = 0; i < va.numel(); ++i) out.rdata()[i] = std::norm(va.cdata()[i]);
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    const Tensor& z = tp.value(a);
    Tensor gz = Tensor::zeros(z.shape(), DType::C128);
    for (int64_t i = 0; i < z.numel(); ++i)
      gz.cdata()[i] = 2.0 * g.rdata()[i] * z.cdata()[i];
    tp.accumulate_grad(a.id, gz);
  });
}

Var rcmul(Var r, Var z) {
  check_same_tape(r, z);
  Tape& t = tape_of(r);
  const Tensor& vr = t.value(r);
  const Tensor& vz = t.value(z);
  FOE_CHECK(!vr.is_complex() && vz.is_complex(),
            "rcmul expects (real, complex) operands");
  FOE_CHECK(same_shape(vr.shape(), vz.shape()), "rcmul: shape mismatch");
  Tensor out = Tensor::zeros(vz.shape(), DType::C128);
  for (int64_t i = 0; i < vz.numel(); ++i)
    out.cdata()[i] = vr.rdata()[i] * vz.cdata()[i];
  return t.record(std::move(out), {r, z}, [r, z](Tape& tp, const Tensor& g) {
    const Tensor& vr = tp.value(r);
    const Tensor& vz = tp.value(z);
    Tensor gr = Tensor::zeros(vr.shape(), DType::F64);
    Tensor gz = Tensor::zeros(vz.shape(), DType::C128);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const cdouble gi = g.cdata()[i];
      gr.rdata()[i] = (std::conj(vz.cdata()[i]) * gi).real();
      gz.cdata()[i] = vr.rdata()[i] * gi;
    }
    tp.accumulate_grad(r.id, gr);
    tp.accumulate_grad(z.id, gz);
  });
}

Var exp_i(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "exp_i expects a real phase tensor");
  Tensor out = Tensor::zeros(va.shape(), DType::C128);
  for (int64_t i = 0; i < va.numel(); ++i) {
    const double p = va.rdata()[i];
    out.cdata()[i] = cdouble(std::cos(p), std::sin(p));
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    const Tensor& phase = tp.value(a);
    Tensor gp = Tensor::zeros(phase.shape(), DType::F64);
    for (int64_t i = 0; i < phase.numel(); ++i) {
      const double p = phase.rdata()[i];
      const cdouble y(std::cos(p), std::sin(p));
      gp.rdata()[i] = (std::conj(y) * g.cdata()[i]).imag();
    }
    tp.accumulate_grad(a.id, gp);
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "sum_all expects a real tensor");
  Tensor out = Tensor::scalar(va.sum());
  const Shape shape = va.shape();
  return t.record(std::move(out), {a},
                  [aid = a.id, shape](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, Tensor::full(shape, g.rdata()[0]));
                  });
}

Var mean_all(Var a) {
  const int64_t n = tape_of(a).value(a).numel();
  return scale(sum_all(a), 1.0 / double(n));
}

Var max_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "max_all expects a real tensor");
  int64_t arg = 0;
  double best = va.rdata()[0];
  for (int64_t i = 1; i < va.numel(); ++i)
    if (va.rdata()[i] > best) {
      best = va.rdata()[i];
      arg = i;
    }
  const Shape shape = va.shape();
  return t.record(Tensor::scalar(best), {a},
                  [aid = a.id, shape, arg](Tape& tp, const Tensor& g) {
                    Tensor gx = Tensor::zeros(shape, DType::F64);
                    gx.rdata()[arg] = g.rdata()[0];
                    tp.accumulate_grad(aid, gx);
                  });
}

Var median_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(!va.is_complex(), "median_all expects a real tensor");
  const int64_t n = va.numel();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const double* p = va.rdata();
  const size_t mid = size_t((n - 1) / 2);  // lower median
  std::nth_element(order.begin(), order.begin() + mid, order.end(),
                   [p](int64_t x, int64_t y) {
                     return p[x] != p[y] ? p[x] < p[y] : x < y;
                   });
  const int64_t arg = order[mid];
  const Shape shape = va.shape();
  return t.record(Tensor::scalar(p[arg]), {a},
                  [aid = a.id, shape, arg](Tape& tp, const Tensor& g) {
                    Tensor gx = Tensor::zeros(shape, DType::F64);
                    gx.rdata()[arg] = g.rdata()[0];
                    tp.accumulate_grad(aid, gx);
                  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = t.value(a).reshaped(shape);
  const Shape old_shape = t.value(a).shape();
  return t.record(std::move(out), {a},
                  [aid = a.id, old_shape](Tape& tp, const Tensor& g) {
                    tp.accumulate_grad(aid, g.reshaped(old_shape));
                  });
}

Var concat0(const std::vector<Var>& parts) {
  FOE_CHECK(!parts.empty(), "concat0 of zero tensors");
  Tape& t = tape_of(parts[0]);
  const Tensor& first = t.value(parts[0]);
  Shape tail(first.shape().begin() + 1, first.shape().end());
  const DType dt = first.dtype();
  int64_t total0 = 0;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    const Tensor& v = t.value(p);
    FOE_CHECK(v.rank() == first.rank() && v.dtype() == dt,
              "concat0: rank/dtype mismatch");
    Shape ptail(v.shape().begin() + 1, v.shape().end());
    FOE_CHECK(ptail == tail, "concat0: trailing shape mismatch");
    total0 += v.dim(0);
  }
  Shape out_shape = first.shape();
  out_shape[0] = total0;
  Tensor out = Tensor::zeros(out_shape, dt);
  const int64_t stride = first.numel() / first.dim(0);
  int64_t off = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> sizes;
  for (const Var& p : parts) {
    const Tensor& v = t.value(p);
    const int64_t len = v.numel();
    if (dt == DType::C128)
      std::copy(v.cdata(), v.cdata() + len, out.cdata() + off);
    else
      std::copy(v.rdata(), v.rdata() + len, out.rdata() + off);
    off += len;
    ids.push_back(p.id);
    sizes.push_back(v.dim(0));
  }
  return t.record(std::move(out), parts,
                  [ids, sizes, tail, dt, stride](Tape& tp, const Tensor& g) {
                    int64_t off = 0;
                    for (size_t k = 0; k < ids.size(); ++k) {
                      Shape part_shape;
                      part_shape.push_back(sizes[k]);
                      part_shape.insert(part_shape.end(), tail.begin(), tail.end());
                      Tensor gp = Tensor::zeros(part_shape, dt);
                      const int64_t len = sizes[k] * stride;
                      if (dt == DType::C128)
                        std::copy(g.cdata() + off, g.cdata() + off + len, gp.cdata());
                      else
                        std::copy(g.rdata() + off, g.rdata() + off + len, gp.rdata());
                      off += len;
                      tp.accumulate_grad(ids[k], gp);
                    }
                  });
}

Var gather_planes(Var a, std::vector<int64_t> planes) {
  Tape& t = tape_of(a);
  const Tensor& va = t.value(a);
  FOE_CHECK(va.rank() >= 1, "gather_planes needs rank >= 1");
  const int64_t z = va.dim(0);
  for (int64_t p : planes)
    FOE_CHECK(p >= 0 && p < z, "plane index ", p, " out of range [0, ", z, ")");
  FOE_CHECK(!planes.empty(), "gather_planes: empty selection");
  const int64_t stride = va.numel() / z;
  Shape out_shape = va.shape();
  out_shape[0] = int64_t(planes.size());
  Tensor out = Tensor::zeros(out_shape, va.dtype());
  for (size_t k = 0; k < planes.size(); ++k) {
    const int64_t src = planes[k] * stride;
    const int64_t dst = int64_t(k) * stride;
    if (va.is_complex())
      std::copy(va.cdata() + src, va.cdata() + src + stride, out.cdata() + dst);
    else
      std::copy(va.rdata() + src, va.rdata() + src + stride, out.rdata() + dst);
  }
  const Shape in_shape = va.shape();
  const DType dt = va.dtype();
  return t.record(std::move(out), {a},
                  [aid = a.id, planes, in_shape, dt, stride](Tape& tp,
                                                             const Tensor& g) {
                    Tensor ga = Tensor::zeros(in_shape, dt);
                    for (size_t k = 0; k < planes.size(); ++k) {
                      const int64_t dst = planes[k] * stride;
                      const int64_t src = int64_t(k) * stride;
                      if (dt == DType::C128)
                        for (int64_t i = 0; i < stride; ++i)
                          ga.cdata()[dst + i] += g.cdata()[src + i];
                      else
                        for (int64_t i = 0; i < stride; ++i)
                          ga.rdata()[dst + i] += g.rdata()[src + i];
                    }
                    tp.accumulate_grad(aid, ga);
                  });
}

}  // namespace foe::ops
