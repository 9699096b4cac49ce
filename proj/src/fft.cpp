#include "foe/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "foe/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace foe::fft {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

struct Plan {
  int64_t n = 0;
  bool pow2 = false;

  // Radix-2: bit-reversal permutation and forward twiddles e^{-2pi i k/n}.
  std::vector<int32_t> bitrev;
  std::vector<cdouble> twiddle;

  // Bluestein: chirp a[k] = e^{-i pi k^2 / n}, pow2 convolution plan of
  // length m, and the forward FFT of the padded chirp filter.
  const Plan* sub = nullptr;
  std::vector<cdouble> chirp;
  std::vector<cdouble> chirp_filter_fft;
};

// Radix-2 in place; kernel sign picked by `inverse`. No locking.
void radix2(const Plan& plan, cdouble* data, bool inverse) {
  const int64_t n = plan.n;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = plan.bitrev[size_t(i)];
    if (j > i) std::swap(data[i], data[j]);
  }
  for (int64_t len = 2; len <= n; len <<= 1) {
    const int64_t half = len >> 1;
    const int64_t step = n / len;
    for (int64_t base = 0; base < n; base += len) {
      for (int64_t k = 0; k < half; ++k) {
        cdouble w = plan.twiddle[size_t(k * step)];
        if (inverse) w = std::conj(w);
        const cdouble odd = data[base + k + half] * w;
        const cdouble even = data[base + k];
        data[base + k] = even + odd;
        data[base + k + half] = even - odd;
      }
    }
  }
}

void bluestein(const Plan& plan, cdouble* data, bool inverse) {
  const int64_t n = plan.n;
  const int64_t m = plan.sub->n;
  // Inverse DFT via conjugation: IDFT(x) = conj(DFT(conj(x))), unnormalized.
  if (inverse)
    for (int64_t i = 0; i < n; ++i) data[i] = std::conj(data[i]);

  std::vector<cdouble> buf(size_t(m), cdouble(0, 0));
  for (int64_t k = 0; k < n; ++k)
    buf[size_t(k)] = data[k] * plan.chirp[size_t(k)];
  radix2(*plan.sub, buf.data(), false);
  for (int64_t k = 0; k < m; ++k)
    buf[size_t(k)] *= plan.chirp_filter_fft[size_t(k)];
  radix2(*plan.sub, buf.data(), true);
  const double inv_m = 1.0 / double(m);
  for (int64_t k = 0; k < n; ++k)
    data[k] = buf[size_t(k)] * inv_m * plan.chirp[size_t(k)];

  if (inverse)
    for (int64_t i = 0; i < n; ++i) data[i] = std::conj(data[i]);
}

void transform_with_plan(const Plan& plan, cdouble* data, bool inverse) {
  if (plan.n == 1) return;
  if (plan.pow2)
    radix2(plan, data, inverse);
  else
    bluestein(plan, data, inverse);
}

std::map<int64_t, std::unique_ptr<Plan>>& plan_cache() {
  static std::map<int64_t, std::unique_ptr<Plan>> cache;
  return cache;
}

std::recursive_mutex& plan_mutex() {
  static std::recursive_mutex m;
  return m;
}

const Plan& get_plan(int64_t n) {
  FOE_CHECK(n >= 1, "fft length must be >= 1, got ", n);
  std::lock_guard<std::recursive_mutex> lock(plan_mutex());
  auto& cache = plan_cache();
  if (auto it = cache.find(n); it != cache.end()) return *it->second;

  auto plan = std::make_unique<Plan>();
  plan->n = n;
  plan->pow2 = is_pow2(n);
  if (plan->pow2) {
    plan->bitrev.resize(size_t(n));
    int bits = 0;
    while ((int64_t(1) << bits) < n) ++bits;
    for (int64_t i = 0; i < n; ++i) {
      int64_t r = 0;
      for (int b = 0; b < bits; ++b)
        if (i & (int64_t(1) << b)) r |= int64_t(1) << (bits - 1 - b);
      plan->bitrev[size_t(i)] = int32_t(r);
    }
    plan->twiddle.resize(size_t(std::max<int64_t>(n / 2, 1)));
    for (int64_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * kPi * double(k) / double(n);
      plan->twiddle[size_t(k)] = cdouble(std::cos(a), std::sin(a));
    }
  } else {
    const int64_t m = next_pow2(2 * n - 1);
    plan->sub = &get_plan(m);
    plan->chirp.resize(size_t(n));
    for (int64_t k = 0; k < n; ++k) {
      const int64_t k2 = (k * k) % (2 * n);
      const double a = -kPi * double(k2) / double(n);
      plan->chirp[size_t(k)] = cdouble(std::cos(a), std::sin(a));
    }
    std::vector<cdouble> b(size_t(m), cdouble(0, 0));
    for (int64_t k = 0; k < n; ++k) {
      const cdouble v = std::conj(plan->chirp[size_t(k)]);
      b[size_t(k)] = v;
      if (k > 0) b[size_t(m - k)] = v;
    }
    radix2(*plan->sub, b.data(), false);
    plan->chirp_filter_fft = std::move(b);
  }
  const Plan& ref = *plan;
  cache.emplace(n, std::move(plan));
  return ref;
}

}  // namespace

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void ensure_plan(int64_t n) { get_plan(n); }

void transform_1d(int64_t n, cdouble* data, bool inverse) {
  transform_with_plan(get_plan(n), data, inverse);
}

void fft2_ortho(cdouble* data, int64_t batch, int64_t h, int64_t w,
                bool inverse) {
  FOE_CHECK(h >= 1 && w >= 1, "fft2 axes must be non-empty");
  const Plan& plan_w = get_plan(w);
  const Plan& plan_h = get_plan(h);

  const int64_t rows = batch * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t r = 0; r < rows; ++r)
    transform_with_plan(plan_w, data + r * w, inverse);

  const int64_t cols = batch * w;
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<cdouble> scratch(static_cast<size_t>(h));
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int64_t c = 0; c < cols; ++c) {
      const int64_t b = c / w;
      const int64_t x = c % w;
      cdouble* base = data + b * h * w + x;
      for (int64_t y = 0; y < h; ++y) scratch[size_t(y)] = base[y * w];
      transform_with_plan(plan_h, scratch.data(), inverse);
      for (int64_t y = 0; y < h; ++y) base[y * w] = scratch[size_t(y)];
    }
  }

  const double scale = 1.0 / std::sqrt(double(h) * double(w));
  const int64_t total = batch * h * w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t i = 0; i < total; ++i) data[i] *= scale;
}

}  // namespace foe::fft
