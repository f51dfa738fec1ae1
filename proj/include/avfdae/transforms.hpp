#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfdae/error.hpp"
#include "avfdae/fft.hpp"

namespace avfdae {

// ---------------------------------------------------------------------------
// Wavelet filter banks

struct Wavelet {
  std::string name;
  std::vector<double> dec_lo, dec_hi, rec_lo, rec_hi;

  std::size_t filter_len() const { return dec_lo.size(); }
};

inline Wavelet make_wavelet(const std::string& name) {
  if (name == "bior3.1") {
    constexpr double a = 0.3535533905932738, b = 1.0606601717798212;
    constexpr double c = 0.1767766952966369, d = 0.5303300858899106;
    return {name, {-a, b, b, -a}, {-c, d, -d, c}, {c, d, d, c}, {-a, -b, b, a}};
  }
  if (name == "haar" || name == "db1" || name == "bior1.1") {
    constexpr double r = 0.7071067811865476;
    return {name, {r, r}, {-r, r}, {r, r}, {r, -r}};
  }
  throw ConfigError("unknown wavelet '" + name + "'");
}

// Low/high-pass coefficient streams for levels 1..L. Index 0 holds level 1.
struct CoefficientSet {
  std::vector<std::vector<double>> w_l;
  std::vector<std::vector<double>> w_h;
  std::vector<std::size_t> parent_len;  // length of the signal each level was computed from
  std::string wavelet_name;

  int levels() const { return static_cast<int>(w_l.size()); }
  const std::vector<double>& low(int level) const { return w_l.at(static_cast<std::size_t>(level - 1)); }
  const std::vector<double>& high(int level) const { return w_h.at(static_cast<std::size_t>(level - 1)); }
};

inline std::size_t dwt_coeff_len(std::size_t n, std::size_t filter_len) { return (n + filter_len - 1) / 2; }

namespace detail {

// Half-sample symmetric extension: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) x(n-2) ...
inline std::size_t reflect_index(std::ptrdiff_t k, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  k %= period;
  if (k < 0) k += period;
  return static_cast<std::size_t>(k < static_cast<std::ptrdiff_t>(n) ? k : period - 1 - k);
}

inline std::vector<double> analysis_branch(std::span<const double> x, const std::vector<double>& h) {
  const std::size_t n = x.size(), f = h.size();
  std::vector<double> out(dwt_coeff_len(n, f));
  for (std::size_t o = 0; o < out.size(); ++o) {
    const auto i = static_cast<std::ptrdiff_t>(2 * o + 1);
    double acc = 0.0;
    for (std::size_t j = 0; j < f; ++j) acc += h[j] * x[reflect_index(i - static_cast<std::ptrdiff_t>(j), n)];
    out[o] = acc;
  }
  return out;
}

}  // namespace detail

// One analysis stage: filter then keep every second output.
inline std::pair<std::vector<double>, std::vector<double>> dwt_single(std::span<const double> x, const Wavelet& w) {
  return {detail::analysis_branch(x, w.dec_lo), detail::analysis_branch(x, w.dec_hi)};
}

// One synthesis stage; output is cropped to out_len.
inline std::vector<double> idwt_single(std::span<const double> approx, std::span<const double> detail_c,
                                       const Wavelet& w, std::size_t out_len) {
  if (approx.size() != detail_c.size())
    throw DataError("idwt: approximation and detail lengths differ (" + std::to_string(approx.size()) + " vs " +
                    std::to_string(detail_c.size()) + ")");
  const std::size_t n = approx.size(), f = w.filter_len();
  if (2 * n + 2 < f + out_len) throw DataError("idwt: coefficients too short for requested length");
  std::vector<double> out(out_len, 0.0);
  const std::size_t delay = f - 2;
  for (std::size_t m = 0; m < out_len; ++m) {
    const std::size_t t = m + delay;
    double acc = 0.0;
    // t - 2k must lie in [0, f)
    for (std::size_t j = t % 2; j < f; j += 2) {
      if (j > t) break;
      const std::size_t k = (t - j) / 2;
      if (k >= n) continue;
      acc += approx[k] * w.rec_lo[j] + detail_c[k] * w.rec_hi[j];
    }
    out[m] = acc;
  }
  return out;
}

inline CoefficientSet dwt_decompose(std::span<const double> signal, int levels, const std::string& wavelet = "bior3.1") {
  const Wavelet w = make_wavelet(wavelet);
  if (levels < 1 || levels > 3) throw ConfigError("dwt levels must be in 1..3, got " + std::to_string(levels));
  const std::size_t min_len = (std::size_t{1} << levels) * w.filter_len();
  if (signal.size() < min_len)
    throw DataError("dwt: signal length " + std::to_string(signal.size()) + " < " + std::to_string(min_len));
  CoefficientSet cs;
  cs.wavelet_name = w.name;
  std::vector<double> current(signal.begin(), signal.end());
  for (int level = 1; level <= levels; ++level) {
    cs.parent_len.push_back(current.size());
    auto [lo, hi] = dwt_single(current, w);
    cs.w_h.push_back(std::move(hi));
    cs.w_l.push_back(lo);
    current = std::move(lo);
  }
  return cs;
}

// Reconstructs from the deepest low-pass stream and every high-pass stream.
inline std::vector<double> idwt_reconstruct(const CoefficientSet& cs) {
  const Wavelet w = make_wavelet(cs.wavelet_name);
  const int levels = cs.levels();
  if (levels < 1 || cs.w_h.size() != cs.w_l.size() || cs.parent_len.size() != cs.w_l.size())
    throw DataError("idwt: inconsistent coefficient set");
  for (int k = 0; k < levels; ++k) {
    const auto expect = dwt_coeff_len(cs.parent_len[static_cast<std::size_t>(k)], w.filter_len());
    if (cs.w_l[static_cast<std::size_t>(k)].size() != expect || cs.w_h[static_cast<std::size_t>(k)].size() != expect)
      throw DataError("idwt: level " + std::to_string(k + 1) + " has inconsistent length");
    if (k > 0 && cs.parent_len[static_cast<std::size_t>(k)] != cs.w_l[static_cast<std::size_t>(k - 1)].size())
      throw DataError("idwt: level " + std::to_string(k + 1) + " parent length mismatch");
  }
  std::vector<double> approx = cs.w_l.back();
  for (int k = levels - 1; k >= 0; --k) {
    const auto idx = static_cast<std::size_t>(k);
    approx = idwt_single(approx, cs.w_h[idx], w, cs.parent_len[idx]);
  }
  return approx;
}

// ---------------------------------------------------------------------------
// Feature views

enum class FeatureKind { Waveform, FftMag, StftMag };

// Row-major; a vector feature has rows == 1.
struct FeatureTensor {
  FeatureKind kind = FeatureKind::Waveform;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<double> data;
  int source_level = 0;
  bool normalized = false;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline FeatureTensor log1p_normalize(FeatureTensor t) {
  for (double& v : t.data) v = std::log1p(std::abs(v));
  t.normalized = true;
  return t;
}

inline FeatureTensor fft_magnitude(std::span<const double> signal, int source_level = 0) {
  if (signal.empty()) throw DataError("fft: empty signal");
  const auto spec = rfft(signal);
  FeatureTensor t;
  t.kind = FeatureKind::FftMag;
  t.cols = spec.size();
  t.source_level = source_level;
  t.data.resize(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) t.data[k] = std::abs(spec[k]);
  return log1p_normalize(std::move(t));
}

struct StftParams {
  std::size_t window_len = 256;
  std::size_t hop = 128;
};

inline std::size_t stft_frame_count(std::size_t n, const StftParams& p) { return (n - p.window_len) / p.hop + 1; }

// Periodic Hann.
inline std::vector<double> hann_window(std::size_t len) {
  std::vector<double> w(len);
  for (std::size_t i = 0; i < len; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
  return w;
}

inline FeatureTensor stft_magnitude(std::span<const double> signal, const StftParams& p = {}, int source_level = 0) {
  if (p.window_len == 0 || p.window_len > signal.size())
    throw DataError("stft: window length " + std::to_string(p.window_len) + " exceeds signal length " +
                    std::to_string(signal.size()));
  if (p.hop == 0 || p.hop > p.window_len) throw DataError("stft: hop must be in (0, window_len]");
  const auto window = hann_window(p.window_len);
  FeatureTensor t;
  t.kind = FeatureKind::StftMag;
  t.rows = stft_frame_count(signal.size(), p);
  t.cols = p.window_len / 2 + 1;
  t.source_level = source_level;
  t.data.resize(t.rows * t.cols);
  std::vector<double> frame(p.window_len);
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t i = 0; i < p.window_len; ++i) frame[i] = signal[r * p.hop + i] * window[i];
    const auto spec = rfft(frame);
    for (std::size_t c = 0; c < t.cols; ++c) t.data[r * t.cols + c] = std::abs(spec[c]);
  }
  return log1p_normalize(std::move(t));
}

// ---------------------------------------------------------------------------
// Coefficient dump: little-endian float32 blob plus a JSON descriptor.

inline void dump_coefficients(const std::filesystem::path& stem, std::span<const double> values, int level,
                              const std::string& wavelet_name) {
  std::ofstream bin(stem.string() + ".f32", std::ios::binary);
  if (!bin) throw DataError("cannot write " + stem.string() + ".f32");
  for (double v : values) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                 static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    bin.write(reinterpret_cast<const char*>(le), 4);
  }
  nlohmann::json desc{{"level", level}, {"len", values.size()}, {"wavelet_name", wavelet_name}};
  std::ofstream js(stem.string() + ".json");
  js << desc.dump(2) << '\n';
}

}  // namespace avfdae
