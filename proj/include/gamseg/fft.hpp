#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <vector>

namespace gamseg::dsp {

using Complex = std::complex<double>;

namespace detail {

struct PlanCache {
  std::mutex mutex;
  std::map<std::size_t, fftw_plan> r2c;
  std::map<std::size_t, fftw_plan> c2r;
  std::map<std::size_t, fftw_plan> c2c;

  ~PlanCache() {
    for (auto& [n, p] : r2c) fftw_destroy_plan(p);
    for (auto& [n, p] : c2r) fftw_destroy_plan(p);
    for (auto& [n, p] : c2c) fftw_destroy_plan(p);
  }
};

inline PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

// Plans are created with FFTW_ESTIMATE | FFTW_UNALIGNED so the chosen
// algorithm never depends on timing or buffer alignment.
inline fftw_plan get_plan(std::map<std::size_t, fftw_plan>& plans, std::size_t n, int kind) {
  auto& cache = plan_cache();
  std::lock_guard lock(cache.mutex);
  if (auto it = plans.find(n); it != plans.end()) return it->second;
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  const int size = static_cast<int>(n);
  std::vector<double> real(n);
  std::vector<Complex> cplx(n);
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  fftw_plan plan = nullptr;
  if (kind == 0) {
    plan = fftw_plan_dft_r2c_1d(size, real.data(), c, flags);
  } else if (kind == 1) {
    plan = fftw_plan_dft_c2r_1d(size, c, real.data(), flags);
  } else {
    std::vector<Complex> out(n);
    plan = fftw_plan_dft_1d(size, c, reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                            flags);
  }
  plans.emplace(n, plan);
  return plan;
}

}  // namespace detail

/// Real-input forward FFT; writes n/2 + 1 bins.
inline void rfft(std::span<const double> in, std::span<Complex> out) {
  const std::size_t n = in.size();
  auto& cache = detail::plan_cache();
  fftw_plan plan = detail::get_plan(cache.r2c, n, 0);
  // fftw_execute_dft_r2c does not modify the input for out-of-place plans.
  fftw_execute_dft_r2c(plan, const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

/// Inverse of rfft, unnormalized (result is n times the signal).
/// `in` holds n/2 + 1 bins and is clobbered.
inline void irfft(std::span<Complex> in, std::span<double> out) {
  const std::size_t n = out.size();
  auto& cache = detail::plan_cache();
  fftw_plan plan = detail::get_plan(cache.c2r, n, 1);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(in.data()), out.data());
}

/// Complex forward FFT.
inline void fft(std::span<const Complex> in, std::span<Complex> out) {
  const std::size_t n = in.size();
  auto& cache = detail::plan_cache();
  fftw_plan plan = detail::get_plan(cache.c2c, n, 2);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<Complex*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_power_of_two(std::size_t n) noexcept {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace gamseg::dsp
