#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "avfdae/error.hpp"
#include "avfdae/fft.hpp"
#include "avfdae/rng.hpp"
#include "avfdae/signal_io.hpp"

namespace avfdae {

enum class NoiseKind : int { White = 0, Blue, Violet, Brown, Pink, Babble1, Babble2 };

inline constexpr std::array<NoiseKind, 7> kAllNoiseKinds{NoiseKind::White, NoiseKind::Blue,  NoiseKind::Violet,
                                                         NoiseKind::Brown, NoiseKind::Pink,  NoiseKind::Babble1,
                                                         NoiseKind::Babble2};

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::Blue: return "blue";
    case NoiseKind::Violet: return "violet";
    case NoiseKind::Brown: return "brown";
    case NoiseKind::Pink: return "pink";
    case NoiseKind::Babble1: return "babble1";
    case NoiseKind::Babble2: return "babble2";
  }
  return "?";
}

inline bool is_colored(NoiseKind k) { return k != NoiseKind::Babble1 && k != NoiseKind::Babble2; }

// PSD exponent alpha (PSD ~ f^alpha) of a colored kind.
inline double spectral_exponent(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return 0.0;
    case NoiseKind::Blue: return 1.0;
    case NoiseKind::Violet: return 2.0;
    case NoiseKind::Brown: return -2.0;
    case NoiseKind::Pink: return -1.0;
    default: throw ConfigError(std::string("noise kind ") + to_string(k) + " has no spectral exponent");
  }
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::White;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> gaussian_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

inline void normalize_rms(std::vector<double>& v) {
  double energy = 0.0;
  for (double x : v) energy += x * x;
  const double rms = std::sqrt(energy / static_cast<double>(v.size()));
  if (rms == 0.0) return;
  for (double& x : v) x /= rms;
}

}  // namespace detail

inline double mean_power(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

// Spectral shaping of white Gaussian noise: bin k > 0 is scaled by
// f_k^(alpha/2); the DC bin is zero whenever alpha != 0. Unit RMS.
inline std::vector<double> gen_colored_noise(NoiseKind kind, std::size_t length, std::uint64_t seed,
                                             int sample_rate_hz = kPipelineSampleRate) {
  if (!is_colored(kind)) throw ConfigError(std::string("gen_colored_noise: ") + to_string(kind) + " is not a colored kind");
  if (length == 0) throw ConfigError("gen_colored_noise: length must be positive");
  const double alpha = spectral_exponent(kind);
  auto white = detail::gaussian_vector(length, seed);
  if (alpha == 0.0 || length < 2) {
    detail::normalize_rms(white);
    return white;
  }
  auto spec = rfft(white);
  spec[0] = 0.0;
  const double df = static_cast<double>(sample_rate_hz) / static_cast<double>(length);
  for (std::size_t k = 1; k < spec.size(); ++k) spec[k] *= std::pow(df * static_cast<double>(k), alpha / 2.0);
  auto out = irfft(spec, length);
  detail::normalize_rms(out);
  return out;
}

struct BabbleRecipe {
  double band_lo_hz = 200.0;
  double band_hi_hz = 3500.0;
  double center_lo_hz = 300.0;
  double center_hi_hz = 3000.0;
  double relative_bandwidth = 0.12;  // Gaussian sigma as a fraction of the center
  double mod_lo_hz = 2.0;
  double mod_hi_hz = 8.0;
};

// Synthetic multi-talker babble: 8 (variant 1) or 16 (variant 2) streams of
// formant-like band-limited noise, each with a slow sinusoidal envelope.
inline std::vector<double> gen_babble(std::size_t length, std::uint64_t seed, int variant,
                                      int sample_rate_hz = kPipelineSampleRate, const BabbleRecipe& recipe = {}) {
  if (length == 0) throw ConfigError("gen_babble: length must be positive");
  if (variant != 1 && variant != 2) throw ConfigError("gen_babble: variant must be 1 or 2");
  const int streams = variant == 1 ? 8 : 16;
  const double fs = sample_rate_hz;
  const double df = fs / static_cast<double>(length);
  std::vector<double> total(length, 0.0);
  for (int s = 0; s < streams; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(s)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double center = recipe.center_lo_hz + (recipe.center_hi_hz - recipe.center_lo_hz) * unit(rng);
    const double sigma = recipe.relative_bandwidth * center;
    const double mod = recipe.mod_lo_hz + (recipe.mod_hi_hz - recipe.mod_lo_hz) * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double gain = 0.5 + 0.5 * unit(rng);

    auto spec = rfft(detail::gaussian_vector(length, rng()));
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const double f = df * static_cast<double>(k);
      if (f < recipe.band_lo_hz || f > recipe.band_hi_hz) {
        spec[k] = 0.0;
      } else {
        const double z = (f - center) / sigma;
        spec[k] *= std::exp(-0.5 * z * z);
      }
    }
    auto stream = irfft(spec, length);
    detail::normalize_rms(stream);
    for (std::size_t i = 0; i < length; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double envelope = 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * mod * t + phase));
      total[i] += gain * envelope * stream[i];
    }
  }
  detail::normalize_rms(total);
  return total;
}

inline std::vector<double> gen_noise(const NoiseSpec& spec, std::size_t length, int sample_rate_hz = kPipelineSampleRate) {
  switch (spec.kind) {
    case NoiseKind::Babble1: return gen_babble(length, spec.seed, 1, sample_rate_hz);
    case NoiseKind::Babble2: return gen_babble(length, spec.seed, 2, sample_rate_hz);
    default: return gen_colored_noise(spec.kind, length, spec.seed, sample_rate_hz);
  }
}

struct NoisyVariant {
  std::string patient_id;
  Site site = Site::Arterial;
  std::size_t base_index = 0;  // position of the clean recording in the expanded input
  NoiseSpec noise;
  double snr_db = 0.0;
  double noise_gain = 0.0;  // factor applied to the unit-RMS noise
  std::vector<double> samples;
  std::vector<double> scaled_noise;  // empty unless retained
};

// output = clean + g * noise, with g chosen so that
// 10 log10(P_clean / P_{g*noise}) == snr_db. No renormalization or clipping.
inline NoisyVariant mix_at_snr(const Recording& clean, std::span<const double> noise, double snr_db,
                               bool keep_noise = true) {
  if (noise.size() < clean.samples.size())
    throw DataError("mix_at_snr: noise shorter than clean signal (" + std::to_string(noise.size()) + " < " +
                    std::to_string(clean.samples.size()) + ")");
  const double p_clean = mean_power(clean.samples);
  const auto head = noise.first(clean.samples.size());
  const double p_noise = mean_power(head);
  if (p_clean == 0.0) throw DataError("mix_at_snr: clean signal has zero power");
  if (p_noise == 0.0) throw DataError("mix_at_snr: noise has zero power");

  NoisyVariant v;
  v.patient_id = clean.patient_id;
  v.site = clean.site;
  v.snr_db = snr_db;
  v.noise_gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  v.samples.resize(clean.samples.size());
  if (keep_noise) v.scaled_noise.resize(clean.samples.size());
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    const double n = v.noise_gain * head[i];
    v.samples[i] = clean.samples[i] + n;
    if (keep_noise) v.scaled_noise[i] = n;
  }
  return v;
}

inline std::uint64_t variant_seed(std::uint64_t seed, const std::string& patient_id, Site site, NoiseKind kind,
                                  double snr_db) {
  std::uint64_t snr_bits;
  std::memcpy(&snr_bits, &snr_db, sizeof snr_bits);
  return derive_seed(seed, fnv1a(patient_id), static_cast<std::uint64_t>(site), static_cast<std::uint64_t>(kind),
                     snr_bits);
}

inline constexpr std::array<double, 2> kDefaultSnrDb{5.0, 15.0};

// The 14 variants (7 kinds x 2 SNRs) of one recording, kind-major order.
inline std::vector<NoisyVariant> augment_recording(const Recording& clean, std::span<const double> snr_levels,
                                                   std::uint64_t seed, bool keep_noise = false) {
  if (snr_levels.size() != 2) throw ConfigError("augmentation needs exactly two SNR levels");
  std::vector<NoisyVariant> out;
  out.reserve(kAllNoiseKinds.size() * 2);
  for (NoiseKind kind : kAllNoiseKinds) {
    for (double snr : snr_levels) {
      NoiseSpec spec{kind, variant_seed(seed, clean.patient_id, clean.site, kind, snr)};
      const auto noise = gen_noise(spec, clean.samples.size(), clean.sample_rate_hz);
      auto v = mix_at_snr(clean, noise, snr, keep_noise);
      v.noise = spec;
      out.push_back(std::move(v));
    }
  }
  return out;
}

inline std::vector<NoisyVariant> expand_cohort(std::span<const Recording> recordings, std::span<const double> snr_levels,
                                               std::uint64_t seed, bool keep_noise = false) {
  if (snr_levels.size() != 2) throw ConfigError("augmentation needs exactly two SNR levels");
  std::vector<NoisyVariant> out;
  out.reserve(recordings.size() * 14);
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    for (auto& v : augment_recording(recordings[r], snr_levels, seed, keep_noise)) {
      v.base_index = r;
      out.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace avfdae
