#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>

#include "avfdae/signal_io.hpp"
#include "test_util.hpp"

using namespace avfdae;
using Catch::Matchers::ContainsSubstring;

namespace {

// Hand-rolled WAV writer, independent of encode_wav.
std::string make_wav(const std::vector<std::int16_t>& samples, std::uint16_t format = 1, std::uint16_t channels = 1,
                     std::uint16_t bits = 16, std::uint32_t rate = 8000) {
  auto u32 = [](std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto u16 = [](std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>(v >> 8));
  };
  std::string data;
  for (auto v : samples) u16(data, static_cast<std::uint16_t>(v));
  std::string s = "RIFF";
  u32(s, static_cast<std::uint32_t>(36 + data.size()));
  s += "WAVEfmt ";
  u32(s, 16);
  u16(s, format);
  u16(s, channels);
  u32(s, rate);
  u32(s, rate * channels * bits / 8);
  u16(s, static_cast<std::uint16_t>(channels * bits / 8));
  u16(s, bits);
  s += "data";
  u32(s, static_cast<std::uint32_t>(data.size()));
  return s + data;
}

Recording tone_with_padding(double pad_s, double tone_s, double amp) {
  Recording r;
  const auto pad = static_cast<std::size_t>(pad_s * 8000);
  const auto tone = static_cast<std::size_t>(tone_s * 8000);
  r.samples.assign(pad, 0.0);
  for (std::size_t i = 0; i < tone; ++i) r.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 8000.0));
  r.samples.insert(r.samples.end(), pad, 0.0);
  return r;
}

}  // namespace

TEST_CASE("PCM scaling", "[signal_io]") {
  const auto rec = decode_wav(make_wav({16384, -32768, 0, 32767}));
  REQUIRE(rec.samples.size() == 4);
  CHECK(rec.samples[0] == 0.5);
  CHECK(rec.samples[1] == -1.0);
  CHECK(rec.samples[2] == 0.0);
  CHECK(rec.samples[3] == 32767.0 / 32768.0);
  CHECK(rec.sample_rate_hz == 8000);
}

TEST_CASE("WAV round trip is byte-identical", "[signal_io]") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> dist(-32768, 32767);
  std::vector<std::int16_t> pcm(5001);
  for (auto& v : pcm) v = static_cast<std::int16_t>(dist(rng));
  const std::string original = make_wav(pcm);
  testutil::TempDir dir;
  {
    std::ofstream f(dir / "in.wav", std::ios::binary);
    f << original;
  }
  const auto rec = read_wav(dir / "in.wav");
  write_wav(dir / "out.wav", rec);
  std::ifstream f(dir / "out.wav", std::ios::binary);
  const std::string rewritten((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(rewritten == original);
  for (std::size_t i = 0; i < pcm.size(); ++i) REQUIRE(to_pcm16(rec.samples[i]) == pcm[i]);
}

TEST_CASE("WAV format violations are named", "[signal_io]") {
  const std::vector<std::int16_t> pcm{1, 2, 3, 4};
  CHECK_THROWS_WITH(decode_wav(make_wav(pcm, 3)), ContainsSubstring("not PCM"));
  CHECK_THROWS_WITH(decode_wav(make_wav(pcm, 0xFFFE)), ContainsSubstring("extensible"));
  CHECK_THROWS_WITH(decode_wav(make_wav(pcm, 1, 2)), ContainsSubstring("mono"));
  CHECK_THROWS_WITH(decode_wav(make_wav(pcm, 1, 1, 8)), ContainsSubstring("16-bit"));
  const auto full = make_wav(pcm);
  CHECK_THROWS_WITH(decode_wav(full.substr(0, full.size() - 3)), ContainsSubstring("truncated"));
  CHECK_THROWS_WITH(decode_wav("not a wav file"), ContainsSubstring("RIFF"));
  CHECK_THROWS_AS(decode_wav(make_wav(pcm, 3)), FormatError);
}

TEST_CASE("Unknown chunks before data are skipped", "[signal_io]") {
  std::string wav = make_wav({100, -100});
  std::string list = "LIST";
  list += std::string("\x03\x00\x00\x00", 4);
  list += "abc";
  list.push_back('\0');  // pad byte for the odd chunk
  wav.insert(36, list);
  const auto rec = decode_wav(wav);
  REQUIRE(rec.samples.size() == 2);
  CHECK(rec.samples[0] == 100.0 / 32768.0);
}

TEST_CASE("Preprocess trims padding and centers a unit-peak segment", "[signal_io]") {
  const auto rec = tone_with_padding(1.0, 3.0, 0.25);
  const auto out = preprocess(rec);
  REQUIRE(out.samples.size() == 16000);
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak == 1.0);
  // Every sample comes from the tone, none from the zero padding.
  double min_rms = 1e9;
  for (std::size_t i = 0; i + 400 <= out.samples.size(); i += 400) {
    double e = 0.0;
    for (std::size_t k = i; k < i + 400; ++k) e += out.samples[k] * out.samples[k];
    min_rms = std::min(min_rms, std::sqrt(e / 400.0));
  }
  CHECK(min_rms > 0.6);
}

TEST_CASE("Preprocess normalizes peak 0.25 to 1", "[signal_io]") {
  Recording r;
  r.samples = testutil::random_signal(24000, 3, 0.05);
  for (double& v : r.samples) v = std::clamp(v, -0.25, 0.25);
  r.samples[12000] = 0.25;
  const auto out = preprocess(r);
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak == 1.0);
}

TEST_CASE("Preprocess rejects short, silent and off-rate input", "[signal_io]") {
  const auto short_rec = tone_with_padding(0.5, 2.5, 0.5);
  CHECK_THROWS_AS(preprocess(short_rec, {3.0, 0.05, 0.02}), PreprocessError);
  Recording silent;
  silent.samples.assign(40000, 0.0);
  CHECK_THROWS_AS(preprocess(silent), PreprocessError);
  auto off_rate = tone_with_padding(0.1, 3.0, 0.5);
  off_rate.sample_rate_hz = 16000;
  CHECK_THROWS_AS(preprocess(off_rate), PreprocessError);
}

TEST_CASE("Preprocess is idempotent", "[signal_io][property]") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    Recording r;
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> pad(0, 8000);
    r.samples.assign(static_cast<std::size_t>(pad(rng)), 0.0);
    const auto body = testutil::random_signal(20000 + seed * 997, seed, 0.1 + 0.05 * seed);
    r.samples.insert(r.samples.end(), body.begin(), body.end());
    r.samples.insert(r.samples.end(), static_cast<std::size_t>(pad(rng)), 0.0);
    const auto once = preprocess(r);
    const auto twice = preprocess(once);
    REQUIRE(once.samples == twice.samples);
  }
}

TEST_CASE("Flow class boundaries", "[signal_io]") {
  CHECK(classify_flow(0.0) == FlowClass::Low);
  CHECK(classify_flow(749.999) == FlowClass::Low);
  CHECK(classify_flow(750.0) == FlowClass::Adequate);
  CHECK(classify_flow(1500.0) == FlowClass::Adequate);
  CHECK(classify_flow(1500.5) == FlowClass::High);
  // Class changes only at the two boundaries.
  int changes = 0;
  FlowClass prev = classify_flow(0.0);
  for (double f = 0.0; f <= 3000.0; f += 0.25) {
    const auto c = classify_flow(f);
    if (c != prev) {
      ++changes;
      CHECK((f == 750.0 || f == 1500.25));
    }
    prev = c;
  }
  CHECK(changes == 2);
}

TEST_CASE("load_cohort excludes incomplete patients", "[signal_io]") {
  testutil::TempDir dir;
  std::filesystem::create_directories(dir / "audio");
  Recording r = tone_with_padding(0.2, 2.5, 0.5);
  for (const char* name : {"audio/a2.wav", "audio/a3.wav", "audio/b2.wav", "audio/b3.wav", "audio/c2.wav", "audio/d2.wav", "audio/d3.wav"})
    write_wav(dir / name, r);
  {
    std::ofstream meta(dir / "metadata.csv");
    meta << "patient_id,gender,age,htn,dm,blood_flow_ml_min,audio_site2,audio_site3\n"
         << "A,male,70,1,0,700,audio/a2.wav,audio/a3.wav\n"
         << "B,female,55,0,1,1600,audio/b2.wav,audio/b3.wav\n"
         << "C,male,60,1,1,900,audio/c2.wav,audio/c3.wav\n"
         << "D,female,65,0,0,,audio/d2.wav,audio/d3.wav\n";
  }
  std::ostringstream log;
  const auto res = load_cohort(dir / "metadata.csv", dir.path(), &log);
  REQUIRE(res.entries.size() == 2);
  CHECK(res.entries[0].patient.patient_id == "A");
  CHECK(res.entries[1].patient.flow_class() == FlowClass::High);
  CHECK(res.entries[0].site3.site == Site::Venous);
  REQUIRE(res.exclusions.size() == 2);
  CHECK_THAT(log.str(), ContainsSubstring("C") && ContainsSubstring("site-3"));
  CHECK_THAT(log.str(), ContainsSubstring("missing flow"));
}

TEST_CASE("Malformed metadata rows report their line", "[signal_io]") {
  std::istringstream in(
      "patient_id,gender,age,htn,dm,blood_flow_ml_min,audio_site2,audio_site3\n"
      "A,male,70,1,0,700,a.wav,b.wav\n"
      "B,unknown,55,0,1,1600,a.wav,b.wav\n");
  CHECK_THROWS_WITH(parse_cohort_csv(in), ContainsSubstring("line 3") && ContainsSubstring("gender"));
  std::istringstream missing("patient_id,gender,age\nA,male,3\n");
  CHECK_THROWS_WITH(parse_cohort_csv(missing), ContainsSubstring("missing column"));
}

TEST_CASE("Empty cohort after exclusion is fatal", "[signal_io]") {
  testutil::TempDir dir;
  {
    std::ofstream meta(dir / "metadata.csv");
    meta << "patient_id,gender,age,htn,dm,blood_flow_ml_min,audio_site2,audio_site3\n"
         << "A,male,70,1,0,700,x.wav,y.wav\n";
  }
  std::ostringstream log;
  CHECK_THROWS_AS(load_cohort(dir / "metadata.csv", dir.path(), &log), DataError);
}

TEST_CASE("Cohort CSV writer round-trips through the parser", "[signal_io]") {
  std::vector<CohortRow> rows(2);
  rows[0].patient = {"P1", Gender::Female, 44, true, false, 812.5};
  rows[0].audio_site2 = "a/p1_2.wav";
  rows[0].audio_site3 = "a/p1_3.wav";
  rows[1].patient = {"P2", Gender::Male, 81, false, true, 1999.0};
  std::ostringstream out;
  write_cohort_csv(out, rows);
  std::istringstream in(out.str());
  const auto back = parse_cohort_csv(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].patient.gender == Gender::Female);
  CHECK(back[0].patient.blood_flow_ml_min == 812.5);
  CHECK(back[0].patient.htn);
  CHECK(back[1].patient.dm);
  CHECK(back[1].audio_site2.empty());
}
