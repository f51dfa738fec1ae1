#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avfdae/error.hpp"

namespace avfdae {

inline constexpr int kPipelineSampleRate = 8000;

enum class Site : int { Anastomosis = 1, Arterial = 2, Venous = 3 };

enum class Gender { Male, Female };

enum class FlowClass : int { Low = 0, Adequate = 1, High = 2 };

inline const char* to_string(FlowClass c) {
  switch (c) {
    case FlowClass::Low: return "low";
    case FlowClass::Adequate: return "adequate";
    case FlowClass::High: return "high";
  }
  return "?";
}

// Bands are [0,750), [750,1500], (1500,inf).
inline FlowClass classify_flow(double ml_min) {
  if (ml_min < 750.0) return FlowClass::Low;
  if (ml_min <= 1500.0) return FlowClass::Adequate;
  return FlowClass::High;
}

struct Recording {
  std::vector<double> samples;
  int sample_rate_hz = kPipelineSampleRate;
  Site site = Site::Arterial;
  std::string patient_id;
};

struct PatientRecord {
  std::string patient_id;
  Gender gender = Gender::Male;
  int age = 0;
  bool htn = false;
  bool dm = false;
  double blood_flow_ml_min = 0.0;

  FlowClass flow_class() const { return classify_flow(blood_flow_ml_min); }
};

// ---------------------------------------------------------------------------
// WAV (RIFF/WAVE, PCM 16-bit little-endian, mono)

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// Decodes a WAV byte buffer. Samples are scaled by 1/32768.
inline Recording decode_wav(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError("missing RIFF/WAVE signature");

  std::optional<int> rate;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = detail::read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (body + 16 > n) throw FormatError("truncated fmt chunk");
      const std::uint16_t format = detail::read_u16(p + body);
      const std::uint16_t channels = detail::read_u16(p + body + 2);
      const std::uint32_t sr = detail::read_u32(p + body + 4);
      const std::uint16_t bits = detail::read_u16(p + body + 14);
      if (format == 0xFFFE) throw FormatError("extensible format header is not supported");
      if (format != 1) throw FormatError("encoding is not PCM (format tag " + std::to_string(format) + ")");
      if (channels != 1) throw FormatError("expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError("expected 16-bit samples, got " + std::to_string(bits));
      if (sr == 0) throw FormatError("sample rate is zero");
      rate = static_cast<int>(sr);
    } else if (id == "data") {
      if (!rate) throw FormatError("data chunk before fmt chunk");
      if (body + size > n) throw FormatError("truncated data chunk");
      if (size % 2 != 0) throw FormatError("odd data chunk size");
      Recording rec;
      rec.sample_rate_hz = *rate;
      rec.samples.resize(size / 2);
      for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const auto s = static_cast<std::int16_t>(detail::read_u16(p + body + 2 * i));
        rec.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return rec;
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(rate ? "missing data chunk" : "missing fmt chunk");
}

inline Recording read_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(detail::slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + std::string(e.what()).substr(12));
  }
}

inline std::int16_t to_pcm16(double v) {
  const double scaled = std::round(v * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

// Canonical 44-byte header. Out-of-range samples are clamped.
inline std::string encode_wav(const std::vector<double>& samples, int sample_rate_hz) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate_hz) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double v : samples) detail::put_u16(out, static_cast<std::uint16_t>(to_pcm16(v)));
  return out;
}

inline void write_wav(const std::filesystem::path& path, const Recording& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = encode_wav(rec.samples, rec.sample_rate_hz);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Preprocessing: silence trim, centered segment, unit-peak normalization.

struct PreprocessOptions {
  double segment_seconds = 2.0;
  double rms_window_seconds = 0.050;
  double silence_fraction = 0.02;  // of peak moving RMS
};

// Centered moving RMS; the window is clipped at the signal edges.
inline std::vector<double> moving_rms(const std::vector<double>& x, std::size_t window) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
  std::vector<double> out(n);
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + (window - half));
    out[i] = std::sqrt(std::max(0.0, prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo));
  }
  return out;
}

inline Recording preprocess(const Recording& rec, const PreprocessOptions& opt = {}) {
  if (rec.sample_rate_hz != kPipelineSampleRate)
    throw PreprocessError("sample rate " + std::to_string(rec.sample_rate_hz) + " Hz, expected 8000 Hz");
  if (!(opt.segment_seconds > 0.0)) throw PreprocessError("segment length must be positive");
  const auto& x = rec.samples;
  const bool silent = std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
  if (x.empty() || silent) throw PreprocessError("recording is silent");

  const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.rms_window_seconds * rec.sample_rate_hz)));
  const auto rms = moving_rms(x, window);
  const double threshold = opt.silence_fraction * *std::max_element(rms.begin(), rms.end());
  std::size_t first = 0;
  while (rms[first] < threshold) ++first;
  std::size_t last = rms.size() - 1;
  while (rms[last] < threshold) --last;
  const std::size_t usable = last - first + 1;

  const auto seg = static_cast<std::size_t>(std::lround(opt.segment_seconds * rec.sample_rate_hz));
  if (usable < seg)
    throw PreprocessError("usable length " + std::to_string(usable) + " samples is shorter than segment " +
                          std::to_string(seg));
  const std::size_t start = first + (usable - seg) / 2;

  Recording out = rec;
  out.samples.assign(x.begin() + static_cast<std::ptrdiff_t>(start), x.begin() + static_cast<std::ptrdiff_t>(start + seg));
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) throw PreprocessError("segment is silent");
  if (peak != 1.0)
    for (double& v : out.samples) v /= peak;
  return out;
}

// ---------------------------------------------------------------------------
// Cohort metadata CSV

struct CohortEntry {
  PatientRecord patient;
  Recording site2;
  Recording site3;
};

struct CohortRow {
  PatientRecord patient;
  std::string audio_site2;
  std::string audio_site3;
};

inline const std::vector<std::string>& cohort_columns() {
  static const std::vector<std::string> cols{"patient_id", "gender", "age", "htn", "dm",
                                             "blood_flow_ml_min", "audio_site2", "audio_site3"};
  return cols;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

namespace detail {

inline bool parse_bool(const std::string& s, bool& out) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "yes" || v == "true" || v == "y") {
    out = true;
    return true;
  }
  if (v == "0" || v == "no" || v == "false" || v == "n") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace detail

// Parses metadata rows. A blank flow or audio path is kept (the row is
// excluded later); anything unparseable is a row-level error.
inline std::vector<CohortRow> parse_cohort_csv(std::istream& in, std::vector<std::string>* blank_flow = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("metadata: empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::vector<int> col(cohort_columns().size(), -1);
  for (std::size_t i = 0; i < header.size(); ++i)
    for (std::size_t k = 0; k < cohort_columns().size(); ++k)
      if (header[i] == cohort_columns()[k]) col[k] = static_cast<int>(i);
  for (std::size_t k = 0; k < col.size(); ++k)
    if (col[k] < 0) throw DataError("metadata: missing column " + cohort_columns()[k]);

  std::vector<CohortRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    auto field = [&](std::size_t k) -> std::string {
      const auto idx = static_cast<std::size_t>(col[k]);
      return idx < f.size() ? f[idx] : std::string{};
    };
    auto fail = [&](const std::string& why) {
      throw DataError("metadata line " + std::to_string(lineno) + ": " + why);
    };
    CohortRow row;
    row.patient.patient_id = field(0);
    if (row.patient.patient_id.empty()) fail("empty patient_id");
    const auto g = field(1);
    if (g == "male" || g == "M" || g == "m") row.patient.gender = Gender::Male;
    else if (g == "female" || g == "F" || g == "f") row.patient.gender = Gender::Female;
    else fail("bad gender '" + g + "'");
    try {
      std::size_t used = 0;
      row.patient.age = std::stoi(field(2), &used);
      if (used != field(2).size() || row.patient.age < 0) fail("bad age '" + field(2) + "'");
    } catch (const std::logic_error&) {
      fail("bad age '" + field(2) + "'");
    }
    if (!detail::parse_bool(field(3), row.patient.htn)) fail("bad htn '" + field(3) + "'");
    if (!detail::parse_bool(field(4), row.patient.dm)) fail("bad dm '" + field(4) + "'");
    const auto flow = field(5);
    if (flow.empty()) {
      row.patient.blood_flow_ml_min = -1.0;
      if (blank_flow) blank_flow->push_back(row.patient.patient_id);
    } else {
      try {
        std::size_t used = 0;
        row.patient.blood_flow_ml_min = std::stod(flow, &used);
        if (used != flow.size() || !(row.patient.blood_flow_ml_min >= 0.0)) fail("bad blood_flow_ml_min '" + flow + "'");
      } catch (const std::logic_error&) {
        fail("bad blood_flow_ml_min '" + flow + "'");
      }
    }
    row.audio_site2 = field(6);
    row.audio_site3 = field(7);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string gender_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

inline void write_cohort_csv(std::ostream& out, const std::vector<CohortRow>& rows) {
  for (std::size_t k = 0; k < cohort_columns().size(); ++k) out << (k ? "," : "") << cohort_columns()[k];
  out << '\n';
  for (const auto& r : rows) {
    std::ostringstream flow;
    flow.precision(17);
    flow << r.patient.blood_flow_ml_min;
    out << r.patient.patient_id << ',' << gender_string(r.patient.gender) << ',' << r.patient.age << ','
        << (r.patient.htn ? 1 : 0) << ',' << (r.patient.dm ? 1 : 0) << ',' << flow.str() << ',' << r.audio_site2
        << ',' << r.audio_site3 << '\n';
  }
}

struct CohortLoadResult {
  std::vector<CohortEntry> entries;
  std::vector<std::string> exclusions;  // "patient_id: reason"
};

// Loads metadata and both puncture-site recordings. Patients without a flow
// label or without site-2/site-3 audio are excluded and logged.
inline CohortLoadResult load_cohort(const std::filesystem::path& metadata_path,
                                    const std::filesystem::path& audio_dir, std::ostream* log = &std::cerr) {
  std::ifstream in(metadata_path);
  if (!in) throw DataError("cannot open metadata " + metadata_path.string());
  const auto rows = parse_cohort_csv(in);

  CohortLoadResult result;
  auto exclude = [&](const std::string& id, const std::string& why) {
    result.exclusions.push_back(id + ": " + why);
    if (log) *log << "excluded patient " << id << ": " << why << '\n';
  };
  for (const auto& row : rows) {
    const auto& id = row.patient.patient_id;
    if (row.patient.blood_flow_ml_min < 0.0) {
      exclude(id, "missing flow label");
      continue;
    }
    auto locate = [&](const std::string& rel) -> std::optional<std::filesystem::path> {
      if (rel.empty()) return std::nullopt;
      auto p = audio_dir / rel;
      if (!std::filesystem::exists(p)) return std::nullopt;
      return p;
    };
    const auto p2 = locate(row.audio_site2);
    const auto p3 = locate(row.audio_site3);
    if (!p2 || !p3) {
      exclude(id, std::string("missing site-") + (!p2 ? "2" : "3") + " recording");
      continue;
    }
    CohortEntry e;
    e.patient = row.patient;
    e.site2 = read_wav(*p2);
    e.site2.site = Site::Arterial;
    e.site2.patient_id = id;
    e.site3 = read_wav(*p3);
    e.site3.site = Site::Venous;
    e.site3.patient_id = id;
    result.entries.push_back(std::move(e));
  }
  if (result.entries.empty()) throw DataError("cohort is empty after exclusions");
  return result;
}

}  // namespace avfdae
