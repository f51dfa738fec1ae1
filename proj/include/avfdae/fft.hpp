#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <vector>

#include <fftw3.h>

namespace avfdae {

// Thin wrappers over FFTW's real transforms. Plans use FFTW_ESTIMATE so that
// planning never measures, and buffers come from fftw_malloc: FFTW picks
// SIMD codelets by buffer alignment, so heap-dependent alignment would make
// the last bits differ between processes.

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)));
  if (!p) throw std::bad_alloc();
  return std::unique_ptr<T[], FftwFree>(p);
}

}  // namespace detail

inline std::vector<std::complex<double>> rfft(std::span<const double> x) {
  const std::size_t n = x.size(), m = n / 2 + 1;
  auto in = detail::fftw_buffer<double>(n);
  auto out = detail::fftw_buffer<fftw_complex>(m);
  std::copy(x.begin(), x.end(), in.get());
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  std::vector<std::complex<double>> result(m);
  for (std::size_t k = 0; k < m; ++k) result[k] = {out[k][0], out[k][1]};
  return result;
}

// Inverse of rfft for a length-n signal, including the 1/n factor.
inline std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n) {
  const std::size_t m = n / 2 + 1;
  auto in = detail::fftw_buffer<fftw_complex>(m);
  auto out = detail::fftw_buffer<double>(n);
  for (std::size_t k = 0; k < m; ++k) {
    const auto v = k < spectrum.size() ? spectrum[k] : std::complex<double>{};
    in[k][0] = v.real();
    in[k][1] = v.imag();
  }
  fftw_plan plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> result(n);
  for (std::size_t i = 0; i < n; ++i) result[i] = out[i] * scale;
  return result;
}

}  // namespace avfdae
