#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "avfdae/experiment.hpp"

using namespace avfdae;

namespace {

// Patients with `per_patient` rows each; labels follow the patient's class.
Dataset make_dataset(const std::vector<int>& patients_per_class, int per_patient, double separation, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  Dataset d;
  d.classes = static_cast<int>(patients_per_class.size());
  std::vector<std::vector<double>> rows;
  int pid = 0;
  for (int c = 0; c < d.classes; ++c)
    for (int p = 0; p < patients_per_class[static_cast<std::size_t>(c)]; ++p, ++pid) {
      PatientRecord rec;
      rec.patient_id = "P" + std::to_string(pid);
      rec.age = 40 + pid % 30;
      rec.gender = pid % 2 ? Gender::Male : Gender::Female;
      for (int k = 0; k < per_patient; ++k) {
        rows.push_back({separation * c + g(rng), separation * (c % 2) + g(rng), g(rng)});
        d.y.push_back(c);
        d.group.push_back(rec.patient_id);
        d.patient.push_back(rec);
      }
    }
  d.x.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < 3; ++j) d.x(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return d;
}

std::multiset<int> labels(const Dataset& d) { return {d.y.begin(), d.y.end()}; }

}  // namespace

TEST_CASE("Balanced sampling", "[experiment]") {
  const auto d = make_dataset({45, 82, 44}, 1, 1.0, 1);
  const auto b = balanced_sample(d, 7);
  CHECK(class_counts(b) == std::vector<std::size_t>{44, 44, 44});
  const auto again = balanced_sample(d, 7);
  CHECK(b.group == again.group);
  CHECK(b.group != balanced_sample(d, 8).group);

  const auto even = make_dataset({10, 10, 10}, 2, 1.0, 2);
  CHECK(labels(balanced_sample(even, 3)) == labels(even));
  REQUIRE_THROWS_AS(balanced_sample(make_dataset({5, 0, 5}, 1, 1.0, 3), 1), DataError);
}

TEST_CASE("Patient split keeps patients on one side", "[experiment]") {
  const auto d = make_dataset({12, 20, 11}, 14, 1.0, 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = group_split(d, 0.7, seed);
    CHECK(s.train.size() + s.test.size() == d.size());
    std::set<std::string> tr, te;
    for (auto i : s.train) tr.insert(d.group[i]);
    for (auto i : s.test) te.insert(d.group[i]);
    for (const auto& g : te) CHECK(tr.count(g) == 0);
    // ceil(0.7 * n) patients per class go to training.
    CHECK(tr.size() == 9 + 14 + 8);
  }
  const auto a = group_split(d, 0.7, 5), b = group_split(d, 0.7, 5);
  CHECK(a.train == b.train);
}

TEST_CASE("Experiment runs are reproducible", "[experiment]") {
  const auto d = make_dataset({15, 25, 14}, 3, 3.0, 5);
  ExperimentConfig cfg;
  cfg.seed = 99;
  const auto r1 = run_experiment(d, cfg), r2 = run_experiment(d, cfg);
  CHECK(r1.n_runs == 10);
  CHECK(r1.runs.size() == 10);
  CHECK(to_json(r1).dump() == to_json(r2).dump());
  CHECK(r1.mean.accuracy > 0.9);
  cfg.seed = 100;
  CHECK(to_json(run_experiment(d, cfg)).dump() != to_json(r1).dump());
}

TEST_CASE("Identical features give chance accuracy", "[experiment]") {
  auto d = make_dataset({20, 20, 20}, 2, 0.0, 6);
  d.x.setConstant(0.5);
  for (auto kind : {ClassifierKind::Svm, ClassifierKind::Knn, ClassifierKind::Gbt}) {
    ExperimentConfig cfg;
    cfg.classifier = kind;
    cfg.seed = 3;
    const auto r = run_experiment(d, cfg);
    CHECK(std::abs(r.mean.accuracy - 1.0 / 3) <= 0.1);
  }
}

TEST_CASE("Aggregation averages runs", "[experiment]") {
  RunMetrics a{0.5, 0.6, 0.7, 0.8, 0.9, 1.0}, b{0.7, 0.4, 0.5, 0.6, 0.7, 0.8};
  const auto r = aggregate({a, b});
  CHECK(r.n_runs == 2);
  CHECK(r.mean.auroc == Catch::Approx(0.6));
  CHECK(r.mean.f1 == Catch::Approx(0.9));
  CHECK(r.avg == Catch::Approx((a.avg() + b.avg()) / 2));
  const auto back = metric_report_from_json(to_json(r));
  CHECK(back.mean.accuracy == r.mean.accuracy);
  CHECK(back.avg == r.avg);
}

TEST_CASE("Condensation and fusion in the experiment loop", "[experiment]") {
  const auto d = make_dataset({15, 15, 15}, 2, 3.0, 8);
  ExperimentConfig cfg;
  cfg.classifier = ClassifierKind::Gbt;
  cfg.gbt.n_trees = 20;
  cfg.n_runs = 2;
  cfg.pca_dim = 2;
  cfg.fuse_demographics = true;
  const auto r = run_experiment(d, cfg);
  CHECK(r.feature_importance.size() == 2 + kDemographicWidth);

  cfg.pca_dim = 5;
  try {
    run_experiment(d, cfg);
    FAIL("expected a PCA error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("stage pca") != std::string::npos);
  }
  cfg.pca_dim.reset();
  cfg.n_runs = 0;
  REQUIRE_THROWS_AS(run_experiment(d, cfg), ConfigError);
}

TEST_CASE("Markdown rendering", "[experiment]") {
  RunMetrics m{0.9, 0.8, 0.7, 0.85, 0.75, 0.72};
  const auto r = aggregate({m});
  const auto md = render_markdown_table("Scheme comparison", {"w_L1", "w_L2"}, {&r, nullptr});
  CHECK(md.rfind("### Scheme comparison", 0) == 0);
  CHECK(md.find("| AUROC       | 0.900 | n/a |") != std::string::npos);
  CHECK(md.find("| Accuracy    | 0.800 | n/a |") != std::string::npos);
  CHECK(md.find("| Avg.        | " + [&] {
          std::ostringstream s;
          s << std::fixed << std::setprecision(3) << m.avg();
          return s.str();
        }()) != std::string::npos);
  CHECK(md.find(kAveragingFooter) != std::string::npos);
}
