#include <catch_amalgamated.hpp>

#include <algorithm>

#include "avfdae/signal_io.hpp"
#include "avfdae/synthdata.hpp"
#include "spectral_oracle.hpp"
#include "test_util.hpp"

using namespace avfdae;

namespace {

// Spectral centroid of the middle second of a recording.
double centroid(const std::vector<double>& x, double fs) {
  const std::size_t mid = x.size() / 2;
  const std::vector<double> part(x.begin() + static_cast<std::ptrdiff_t>(mid - 4000), x.begin() + static_cast<std::ptrdiff_t>(mid + 4000));
  const auto p = testutil::welch(part, fs, 128, 20.0, 4000.0);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.freq.size(); ++i) {
    num += p.freq[i] * p.power[i];
    den += p.power[i];
  }
  return num / den;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

TEST_CASE("Synthetic patients are deterministic", "[synthdata]") {
  SynthConfig c;
  const auto a = synth_patient(c, 17), b = synth_patient(c, 17);
  CHECK(a.site2.samples == b.site2.samples);
  CHECK(a.site3.samples == b.site3.samples);
  CHECK(a.patient.blood_flow_ml_min == b.patient.blood_flow_ml_min);
  CHECK(a.patient.patient_id == "P018");
  CHECK(synth_patient(c, 18).site2.samples != a.site2.samples);
  REQUIRE_THROWS_AS(synth_patient(c, 171), ConfigError);
}

TEST_CASE("Default cohort class counts", "[synthdata]") {
  SynthConfig c;
  CHECK(class_allocation(c) == std::array<int, 3>{45, 82, 44});
  const auto schedule = class_schedule(c);
  CHECK(std::count(schedule.begin(), schedule.end(), FlowClass::Low) == 45);
  CHECK(std::count(schedule.begin(), schedule.end(), FlowClass::Adequate) == 82);
  CHECK(std::count(schedule.begin(), schedule.end(), FlowClass::High) == 44);
  for (int i : {0, 50, 120}) {
    const auto p = synth_patient(c, i, schedule);
    CHECK(p.patient.flow_class() == schedule[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("Config validation and JSON round trip", "[synthdata]") {
  SynthConfig c;
  c.class_proportions = {0.5, 0.5, 0.5};
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.classes[0].pitch = {10.0, 300.0};
  REQUIRE_THROWS_AS(c.validate(), ConfigError);

  SynthConfig d;
  d.n_patients = 12;
  d.classes[1].pitch = {170.0, 390.0};
  SynthConfig e;
  apply_json(e, to_json(d));
  CHECK(to_json(e).dump() == to_json(d).dump());
  REQUIRE_THROWS_AS(apply_json(e, nlohmann::json{{"bogus", 1}}), ConfigError);
}

TEST_CASE("Centroid ordering, separability and site attenuation", "[synthdata]") {
  SynthConfig c;
  c.n_patients = 500;
  const auto schedule = class_schedule(c);
  std::vector<std::pair<double, int>> points;
  int site_ok = 0;
  for (int i = 0; i < c.n_patients; ++i) {
    const auto p = synth_patient(c, i, schedule);
    points.emplace_back(centroid(p.site2.samples, c.sample_rate_hz), static_cast<int>(p.patient.flow_class()));
    site_ok += energy(p.site3.samples) < energy(p.site2.samples);
  }
  CHECK(site_ok == c.n_patients);

  // Ordering: Low above every Adequate median, Adequate above the High median.
  std::array<std::vector<double>, 3> by_class;
  for (auto [f, k] : points) by_class[static_cast<std::size_t>(k)].push_back(f);
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  const double m_low = median(by_class[0]), m_adequate = median(by_class[1]), m_high = median(by_class[2]);
  int ordered = 0;
  for (auto [f, k] : points) {
    if (k == 0) ordered += f > m_adequate;
    if (k == 1) ordered += f < m_low && f > m_high;
    if (k == 2) ordered += f < m_adequate;
  }
  CHECK(static_cast<double>(ordered) / static_cast<double>(points.size()) >= 0.9);

  // Best pair of centroid thresholds, an axis-aligned linear separator.
  std::sort(points.begin(), points.end());
  const std::size_t n = points.size();
  std::vector<int> high_below(n + 1, 0), adequate_below(n + 1, 0), low_below(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    high_below[i + 1] = high_below[i] + (points[i].second == 2);
    adequate_below[i + 1] = adequate_below[i] + (points[i].second == 1);
    low_below[i + 1] = low_below[i] + (points[i].second == 0);
  }
  int best = 0;
  for (std::size_t a = 0; a <= n; ++a)
    for (std::size_t b = a; b <= n; ++b)
      best = std::max(best, high_below[a] + (adequate_below[b] - adequate_below[a]) + (low_below[n] - low_below[b]));
  CHECK(static_cast<double>(best) / static_cast<double>(n) >= 0.95);
}

TEST_CASE("Written cohort loads back", "[synthdata]") {
  testutil::TempDir dir;
  SynthConfig c;
  c.n_patients = 4;
  write_synth_cohort(c, dir.path());
  const auto loaded = load_cohort(dir / kCohortMetadataName, dir.path(), nullptr);
  REQUIRE(loaded.entries.size() == 4);
  CHECK(loaded.exclusions.empty());
  const auto direct = synth_patient(c, 2);
  const auto& e = loaded.entries[2];
  CHECK(e.patient.patient_id == direct.patient.patient_id);
  CHECK(e.patient.age == direct.patient.age);
  REQUIRE(e.site2.samples.size() == direct.site2.samples.size());
  for (std::size_t i = 0; i < direct.site2.samples.size(); i += 97)
    CHECK(std::abs(e.site2.samples[i] - direct.site2.samples[i]) <= 1.0 / 32768.0);
  for (const auto& entry : loaded.entries) {
    CHECK_NOTHROW(preprocess(entry.site2));
    CHECK_NOTHROW(preprocess(entry.site3));
  }
}
