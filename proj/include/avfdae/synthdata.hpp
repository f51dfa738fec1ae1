#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfdae/augment.hpp"
#include "avfdae/error.hpp"
#include "avfdae/fft.hpp"
#include "avfdae/rng.hpp"
#include "avfdae/signal_io.hpp"

namespace avfdae {

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

// Acoustic recipe of one flow class. The bruit is a band of Gaussian-shaped
// spectral energy whose center is drawn per patient from [lo, hi].
struct ClassAcoustics {
  Band pitch;
  double bandwidth = 0.2;   // spectral sigma as a fraction of the center frequency
  double diastolic = 0.2;   // continuous floor relative to the systolic peak
  double amplitude = 0.5;   // recorded peak level, full scale = 1
  Band flow_ml_min;
  double pulse = 0.0;       // low-frequency systolic pressure pulse relative to the bruit peak
  double age_shift = 0.0;   // years added to the cohort mean
  double dm_shift = 0.0;    // added to the diabetes probability
};

struct SiteAttenuation {
  double gain = 0.6;     // venous / arterial amplitude ratio
  double tilt = -0.4;    // spectrum scaled by (1 + f/tilt_ref)^tilt
  double tilt_ref_hz = 400.0;
  double max_delay_ms = 12.0;
  double pulse_transfer = 0.2;  // share of the arterial pulse that reaches the venous site
};

struct SynthConfig {
  int n_patients = 171;
  std::array<double, 3> class_proportions{45.0 / 171.0, 82.0 / 171.0, 44.0 / 171.0};
  std::uint64_t seed = 20240611;
  int sample_rate_hz = kPipelineSampleRate;
  double duration_s = 5.0;
  double lead_silence_s = 0.5;
  std::array<double, 2> heart_rate_bpm{60.0, 90.0};
  double systolic_fraction = 0.35;
  double noise_floor = 0.002;  // background relative to the bruit peak
  double amplitude_jitter = 0.15;
  // Chance that a patient's pitch is drawn from a neighboring class band.
  double confusion_rate = 0.0;
  std::array<ClassAcoustics, 3> classes{
      ClassAcoustics{{600.0, 900.0}, 0.08, 0.08, 0.35, {250.0, 740.0}, 0.05, 2.0, 0.06},
      ClassAcoustics{{230.0, 420.0}, 0.30, 0.25, 0.50, {760.0, 1490.0}, 0.30, 0.0, 0.0},
      ClassAcoustics{{80.0, 190.0}, 0.30, 0.45, 0.80, {1510.0, 2600.0}, 0.60, -2.0, -0.06}};
  std::array<SiteAttenuation, 3> site3{SiteAttenuation{0.45, -0.5, 400.0, 12.0, 0.2},
                                       SiteAttenuation{0.60, -0.4, 400.0, 12.0, 0.2},
                                       SiteAttenuation{0.70, -0.3, 400.0, 12.0, 0.2}};
  double male_fraction = 102.0 / 171.0;
  double htn_fraction = 124.0 / 171.0;
  double dm_fraction = 111.0 / 171.0;
  double age_mean = 67.6;
  double age_sd = 13.3;

  void validate() const {
    if (n_patients < 1) throw ConfigError("synth: n_patients must be >= 1");
    double total = 0.0;
    for (double p : class_proportions) {
      if (p < 0.0) throw ConfigError("synth: class proportions must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synth: class proportions must sum to 1");
    const double nyquist = sample_rate_hz / 2.0;
    for (const auto& c : classes) {
      if (!(c.pitch.lo_hz > 20.0 && c.pitch.hi_hz < 4000.0 && c.pitch.lo_hz <= c.pitch.hi_hz && c.pitch.hi_hz < nyquist))
        throw ConfigError("synth: pitch bands must lie within (20, 4000) Hz");
      if (c.bandwidth <= 0.0 || c.amplitude <= 0.0 || c.amplitude > 1.0 || c.diastolic < 0.0 || c.diastolic > 1.0)
        throw ConfigError("synth: invalid class acoustics");
      if (c.pulse < 0.0) throw ConfigError("synth: pulse must be non-negative");
    }
    for (const auto& s : site3)
      if (!(s.gain > 0.0 && s.gain < 1.0) || s.tilt > 0.0 || s.tilt_ref_hz <= 0.0 || s.max_delay_ms < 0.0 || s.pulse_transfer < 0.0 || s.pulse_transfer > 1.0)
        throw ConfigError("synth: site-3 attenuation needs gain in (0,1) and a non-positive tilt");
    if (heart_rate_bpm[0] <= 0.0 || heart_rate_bpm[1] < heart_rate_bpm[0]) throw ConfigError("synth: bad heart rate range");
    if (duration_s <= 2.0 * lead_silence_s) throw ConfigError("synth: duration too short for the silence padding");
    if (confusion_rate < 0.0 || confusion_rate > 1.0) throw ConfigError("synth: confusion_rate must be in [0,1]");
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  using nlohmann::json;
  auto band = [](const Band& b) { return json::array({b.lo_hz, b.hi_hz}); };
  json classes = json::array(), sites = json::array();
  for (const auto& k : c.classes)
    classes.push_back({{"pitch_hz", band(k.pitch)}, {"bandwidth", k.bandwidth}, {"diastolic", k.diastolic},
                       {"amplitude", k.amplitude}, {"flow_ml_min", band(k.flow_ml_min)}, {"pulse", k.pulse}, {"age_shift", k.age_shift},
                       {"dm_shift", k.dm_shift}});
  for (const auto& s : c.site3)
    sites.push_back({{"gain", s.gain}, {"tilt", s.tilt}, {"tilt_ref_hz", s.tilt_ref_hz}, {"max_delay_ms", s.max_delay_ms}, {"pulse_transfer", s.pulse_transfer}});
  return {{"n_patients", c.n_patients},
          {"class_proportions", c.class_proportions},
          {"seed", c.seed},
          {"sample_rate_hz", c.sample_rate_hz},
          {"duration_s", c.duration_s},
          {"lead_silence_s", c.lead_silence_s},
          {"heart_rate_bpm", c.heart_rate_bpm},
          {"systolic_fraction", c.systolic_fraction},
          {"noise_floor", c.noise_floor},
          {"amplitude_jitter", c.amplitude_jitter},
          {"confusion_rate", c.confusion_rate},
          {"classes", classes},
          {"site3", sites},
          {"male_fraction", c.male_fraction},
          {"htn_fraction", c.htn_fraction},
          {"dm_fraction", c.dm_fraction},
          {"age_mean", c.age_mean},
          {"age_sd", c.age_sd}};
}

// Overlays whatever keys are present in j onto c.
inline void apply_json(SynthConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  const auto known = to_json(SynthConfig{});
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("synth config: unknown key '" + key + "'");
  try {
    auto band = [](const nlohmann::json& v, Band& b) {
      b.lo_hz = v.at(0).get<double>();
      b.hi_hz = v.at(1).get<double>();
    };
    if (j.contains("n_patients")) c.n_patients = j["n_patients"].get<int>();
    if (j.contains("class_proportions")) c.class_proportions = j["class_proportions"].get<std::array<double, 3>>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("sample_rate_hz")) c.sample_rate_hz = j["sample_rate_hz"].get<int>();
    if (j.contains("duration_s")) c.duration_s = j["duration_s"].get<double>();
    if (j.contains("lead_silence_s")) c.lead_silence_s = j["lead_silence_s"].get<double>();
    if (j.contains("heart_rate_bpm")) c.heart_rate_bpm = j["heart_rate_bpm"].get<std::array<double, 2>>();
    if (j.contains("systolic_fraction")) c.systolic_fraction = j["systolic_fraction"].get<double>();
    if (j.contains("noise_floor")) c.noise_floor = j["noise_floor"].get<double>();
    if (j.contains("amplitude_jitter")) c.amplitude_jitter = j["amplitude_jitter"].get<double>();
    if (j.contains("confusion_rate")) c.confusion_rate = j["confusion_rate"].get<double>();
    if (j.contains("classes")) {
      const auto& arr = j["classes"];
      if (arr.size() != 3) throw ConfigError("synth: classes must have 3 entries");
      for (std::size_t i = 0; i < 3; ++i) {
        auto& k = c.classes[i];
        const auto& v = arr[i];
        if (v.contains("pitch_hz")) band(v["pitch_hz"], k.pitch);
        if (v.contains("bandwidth")) k.bandwidth = v["bandwidth"].get<double>();
        if (v.contains("diastolic")) k.diastolic = v["diastolic"].get<double>();
        if (v.contains("amplitude")) k.amplitude = v["amplitude"].get<double>();
        if (v.contains("flow_ml_min")) band(v["flow_ml_min"], k.flow_ml_min);
        if (v.contains("pulse")) k.pulse = v["pulse"].get<double>();
        if (v.contains("age_shift")) k.age_shift = v["age_shift"].get<double>();
        if (v.contains("dm_shift")) k.dm_shift = v["dm_shift"].get<double>();
      }
    }
    if (j.contains("site3")) {
      const auto& arr = j["site3"];
      if (arr.size() != 3) throw ConfigError("synth: site3 must have 3 entries");
      for (std::size_t i = 0; i < 3; ++i) {
        auto& s = c.site3[i];
        const auto& v = arr[i];
        if (v.contains("gain")) s.gain = v["gain"].get<double>();
        if (v.contains("tilt")) s.tilt = v["tilt"].get<double>();
        if (v.contains("tilt_ref_hz")) s.tilt_ref_hz = v["tilt_ref_hz"].get<double>();
        if (v.contains("max_delay_ms")) s.max_delay_ms = v["max_delay_ms"].get<double>();
        if (v.contains("pulse_transfer")) s.pulse_transfer = v["pulse_transfer"].get<double>();
      }
    }
    if (j.contains("male_fraction")) c.male_fraction = j["male_fraction"].get<double>();
    if (j.contains("htn_fraction")) c.htn_fraction = j["htn_fraction"].get<double>();
    if (j.contains("dm_fraction")) c.dm_fraction = j["dm_fraction"].get<double>();
    if (j.contains("age_mean")) c.age_mean = j["age_mean"].get<double>();
    if (j.contains("age_sd")) c.age_sd = j["age_sd"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
}

// Per-class patient counts by largest remainder, ties to the lower class.
inline std::array<int, 3> class_allocation(const SynthConfig& c) {
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = c.class_proportions[k] * c.n_patients;
    counts[k] = static_cast<int>(std::floor(exact));
    rem[k] = exact - counts[k];
    assigned += counts[k];
  }
  while (assigned < c.n_patients) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

inline std::vector<FlowClass> class_schedule(const SynthConfig& c) {
  const auto counts = class_allocation(c);
  std::vector<FlowClass> labels;
  for (int k = 0; k < 3; ++k) labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(k)]), static_cast<FlowClass>(k));
  Rng rng(derive_seed(c.seed, fnv1a("class-schedule")));
  shuffle_in_place(labels, rng);
  return labels;
}

inline std::string synth_patient_id(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%03d", idx + 1);
  return buf;
}

struct SynthPatient {
  PatientRecord patient;
  Recording site2;
  Recording site3;
};

namespace detail {

// Gaussian spectral bump of white noise, unit RMS.
inline std::vector<double> band_noise(std::size_t n, double fs, double center_hz, double sigma_hz, std::uint64_t seed) {
  auto spec = rfft(gaussian_vector(n, seed));
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    const double z = (f - center_hz) / sigma_hz;
    spec[k] *= std::exp(-0.5 * z * z);
  }
  spec[0] = 0.0;
  auto out = irfft(spec, n);
  normalize_rms(out);
  return out;
}

inline std::vector<double> noise_floor(std::size_t n, double level, std::uint64_t seed) {
  auto v = gaussian_vector(n, seed);
  for (double& x : v) x *= level;
  return v;
}

// Systolic raised-cosine burst on top of a continuous diastolic floor.
inline double cardiac_envelope(double t, double period, double phase, double systolic_fraction, double diastolic) {
  double u = std::fmod(t / period + phase, 1.0);
  if (u < 0.0) u += 1.0;
  double burst = 0.0;
  if (u < systolic_fraction) burst = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * u / systolic_fraction));
  return diastolic + (1.0 - diastolic) * burst;
}

// Half-sine over the first `width` of each beat.
inline double systolic_pulse(double t, double period, double phase, double width) {
  double u = std::fmod(t / period + phase, 1.0);
  if (u < 0.0) u += 1.0;
  return u < width ? std::sin(std::numbers::pi * u / width) : 0.0;
}

}  // namespace detail

inline SynthPatient synth_patient(const SynthConfig& c, int idx, const std::vector<FlowClass>& schedule) {
  if (idx < 0 || idx >= c.n_patients) throw ConfigError("synth_patient: index out of range");
  const FlowClass label = schedule.at(static_cast<std::size_t>(idx));
  const auto k = static_cast<std::size_t>(label);
  const auto& acoustics = c.classes[k];
  Rng rng(derive_seed(c.seed, fnv1a("patient"), static_cast<std::uint64_t>(idx)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SynthPatient out;
  auto& p = out.patient;
  p.patient_id = synth_patient_id(idx);
  p.blood_flow_ml_min = std::round(uniform(acoustics.flow_ml_min.lo_hz, acoustics.flow_ml_min.hi_hz));
  p.gender = unit(rng) < c.male_fraction ? Gender::Male : Gender::Female;
  std::normal_distribution<double> age(c.age_mean + acoustics.age_shift, c.age_sd);
  p.age = static_cast<int>(std::clamp(std::round(age(rng)), 20.0, 95.0));
  p.htn = unit(rng) < c.htn_fraction;
  p.dm = unit(rng) < std::clamp(c.dm_fraction + acoustics.dm_shift, 0.0, 1.0);

  // Acoustic class may be borrowed from a neighbor to blur the boundaries.
  std::size_t acoustic_class = k;
  if (unit(rng) < c.confusion_rate) {
    if (k == 0) acoustic_class = 1;
    else if (k == 2) acoustic_class = 1;
    else acoustic_class = unit(rng) < 0.5 ? 0 : 2;
  }
  const auto& a = c.classes[acoustic_class];
  const double center = uniform(a.pitch.lo_hz, a.pitch.hi_hz);
  const double bpm = uniform(c.heart_rate_bpm[0], c.heart_rate_bpm[1]);
  const double phase = unit(rng);
  const double peak = acoustics.amplitude * (1.0 + c.amplitude_jitter * (2.0 * unit(rng) - 1.0));
  const auto& att = c.site3[k];
  const double delay_ms = uniform(0.0, att.max_delay_ms);

  const double fs = c.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(c.duration_s * fs));
  const auto lead = static_cast<std::size_t>(std::llround(c.lead_silence_s * fs));
  const std::size_t body = n - 2 * lead;

  auto carrier = detail::band_noise(body, fs, center, a.bandwidth * center, derive_seed(c.seed, fnv1a("carrier"), static_cast<std::uint64_t>(idx)));
  std::vector<double> bruit(body);
  for (std::size_t i = 0; i < body; ++i)
    bruit[i] = carrier[i] * detail::cardiac_envelope(static_cast<double>(i) / fs, 60.0 / bpm, phase, c.systolic_fraction, a.diastolic);
  double max_abs = 0.0;
  for (double v : bruit) max_abs = std::max(max_abs, std::abs(v));
  for (double& v : bruit) v /= max_abs;
  // Wall motion under each systole, strongest at high flow and mostly lost
  // by the venous site. It sits below 20 Hz, clear of the bruit.
  std::vector<double> pulse(body);
  for (std::size_t i = 0; i < body; ++i)
    pulse[i] = acoustics.pulse * detail::systolic_pulse(static_cast<double>(i) / fs, 60.0 / bpm, phase, 2.0 * c.systolic_fraction);
  max_abs = 0.0;
  for (std::size_t i = 0; i < body; ++i) max_abs = std::max(max_abs, std::abs(bruit[i] + pulse[i]));
  for (std::size_t i = 0; i < body; ++i) {
    bruit[i] *= peak / max_abs;
    pulse[i] *= peak / max_abs;
  }

  // Venous site: tilt the spectrum down, attenuate and delay.
  auto spec = rfft(bruit);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double f = static_cast<double>(i) * fs / static_cast<double>(body);
    spec[i] *= att.gain * std::pow(1.0 + f / att.tilt_ref_hz, att.tilt);
  }
  auto venous = irfft(spec, body);
  for (std::size_t i = 0; i < body; ++i) venous[i] += att.gain * att.pulse_transfer * pulse[i];
  const auto delay = static_cast<std::size_t>(std::llround(delay_ms * 1e-3 * fs));

  auto floor2 = detail::noise_floor(n, peak * c.noise_floor, derive_seed(c.seed, fnv1a("floor2"), static_cast<std::uint64_t>(idx)));
  auto floor3 = detail::noise_floor(n, peak * att.gain * c.noise_floor, derive_seed(c.seed, fnv1a("floor3"), static_cast<std::uint64_t>(idx)));
  out.site2.samples = std::move(floor2);
  out.site3.samples = std::move(floor3);
  for (std::size_t i = 0; i < body; ++i) {
    out.site2.samples[lead + i] += bruit[i] + pulse[i];
    if (lead + delay + i < n) out.site3.samples[lead + delay + i] += venous[i];
  }
  for (auto* r : {&out.site2, &out.site3}) {
    r->sample_rate_hz = c.sample_rate_hz;
    r->patient_id = p.patient_id;
    for (double& v : r->samples) v = std::clamp(v, -1.0, 32767.0 / 32768.0);
  }
  out.site2.site = Site::Arterial;
  out.site3.site = Site::Venous;
  return out;
}

inline SynthPatient synth_patient(const SynthConfig& c, int idx) { return synth_patient(c, idx, class_schedule(c)); }

inline std::vector<SynthPatient> synth_cohort(const SynthConfig& c) {
  c.validate();
  const auto schedule = class_schedule(c);
  std::vector<SynthPatient> out;
  out.reserve(static_cast<std::size_t>(c.n_patients));
  for (int i = 0; i < c.n_patients; ++i) out.push_back(synth_patient(c, i, schedule));
  return out;
}

inline constexpr const char* kCohortMetadataName = "metadata.csv";
inline constexpr const char* kCohortAudioDir = "audio";

// Writes <dir>/metadata.csv and <dir>/audio/<id>_site{2,3}.wav, the layout
// load_cohort(dir / "metadata.csv", dir) reads back.
inline void write_synth_cohort(const SynthConfig& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto patients = synth_cohort(c);
  fs::create_directories(dir / kCohortAudioDir);
  std::vector<CohortRow> rows;
  for (const auto& sp : patients) {
    CohortRow row;
    row.patient = sp.patient;
    row.audio_site2 = std::string(kCohortAudioDir) + "/" + sp.patient.patient_id + "_site2.wav";
    row.audio_site3 = std::string(kCohortAudioDir) + "/" + sp.patient.patient_id + "_site3.wav";
    write_wav(dir / row.audio_site2, sp.site2);
    write_wav(dir / row.audio_site3, sp.site3);
    rows.push_back(std::move(row));
  }
  std::ofstream meta(dir / kCohortMetadataName, std::ios::binary);
  if (!meta) throw DataError("cannot write " + (dir / kCohortMetadataName).string());
  write_cohort_csv(meta, rows);
}

}  // namespace avfdae
