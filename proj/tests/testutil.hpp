#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "foe/ops.hpp"
#include "foe/rng.hpp"
#include "foe/tape.hpp"
#include "foe/tensor.hpp"

namespace foe::test {

inline Tensor random_real(const Shape& shape, Rng& rng, double lo = -1.0,
                          double hi = 1.0) {
  Tensor t = Tensor::zeros(shape, DType::F64);
  for (int64_t i = 0; i < t.numel(); ++i) t.rdata()[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_complex(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape, DType::C128);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.cdata()[i] = cdouble(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.is_complex() || b.is_complex()) {
    const Tensor ca = a.is_complex() ? a : a.to_complex();
    const Tensor cb = b.is_complex() ? b : b.to_complex();
    double m = 0.0;
    for (int64_t i = 0; i < ca.numel(); ++i)
      m = std::max(m, std::abs(ca.cdata()[i] - cb.cdata()[i]));
    return m;
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.rdata()[i] - b.rdata()[i]));
  return m;
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  if (t.is_complex())
    for (int64_t i = 0; i < t.numel(); ++i) s += std::norm(t.cdata()[i]);
  else
    for (int64_t i = 0; i < t.numel(); ++i) s += t.rdata()[i] * t.rdata()[i];
  return std::sqrt(s);
}

// Builds a real scalar loss from leaf values; used for both the analytic
// backward pass and the central finite-difference probes.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradcheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central finite differences on every real component of every leaf (complex
// leaves are probed on both channels). Relative error uses a small floor so
// near-zero gradient pairs compare cleanly.
inline GradcheckResult gradcheck(const GraphFn& fn,
                                 const std::vector<Tensor>& leaf_values,
                                 double h = 1e-6, int64_t max_per_leaf = -1) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& v : leaf_values) leaves.push_back(tape.leaf(v, true));
    Var loss = fn(tape, leaves);
    tape.backward(loss);
    for (const Var& leaf : leaves) {
      if (tape.has_grad(leaf))
        analytic.push_back(tape.grad(leaf));
      else
        analytic.push_back(
            Tensor::zeros(tape.value(leaf).shape(), tape.value(leaf).dtype()));
    }
  }

  auto eval = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& v : values) leaves.push_back(tape.leaf(v, false));
    return tape.value(fn(tape, leaves)).item();
  };

  GradcheckResult result;
  std::vector<Tensor> probe = leaf_values;
  for (size_t li = 0; li < leaf_values.size(); ++li) {
    Tensor& t = probe[li];
    const int64_t comps = t.numel() * (t.is_complex() ? 2 : 1);
    const int64_t stride =
        (max_per_leaf > 0 && comps > max_per_leaf)
            ? (comps + max_per_leaf - 1) / max_per_leaf
            : 1;
    for (int64_t ci = 0; ci < comps; ci += stride) {
      auto component = [&](Tensor& tt) -> double& {
        if (tt.is_complex()) {
          cdouble& z = tt.cdata()[ci / 2];
          return reinterpret_cast<double(&)[2]>(z)[ci % 2];
        }
        return tt.rdata()[ci];
      };
      const double orig = component(t);
      component(t) = orig + h;
      const double fp = eval(probe);
      component(t) = orig - h;
      const double fm = eval(probe);
      component(t) = orig;
      const double fd = (fp - fm) / (2.0 * h);

      double an;
      if (analytic[li].is_complex()) {
        const cdouble z = analytic[li].cdata()[ci / 2];
        an = (ci % 2 == 0) ? z.real() : z.imag();
      } else {
        an = analytic[li].rdata()[ci];
      }
      const double denom = std::max(std::max(std::abs(an), std::abs(fd)), 1e-4);
      result.max_rel_err = std::max(result.max_rel_err, std::abs(an - fd) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace foe::test
