#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "avfdae/error.hpp"
#include "avfdae/gbt.hpp"
#include "avfdae/knn.hpp"
#include "avfdae/latent.hpp"
#include "avfdae/metrics.hpp"
#include "avfdae/rng.hpp"
#include "avfdae/svm.hpp"

namespace avfdae {

// Downstream samples: one row per latent, labelled, grouped by patient.
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<std::string> group;
  std::vector<PatientRecord> patient;  // optional, aligned with rows; needed for fusion
  int classes = 0;

  std::size_t size() const { return y.size(); }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset d;
    d.classes = classes;
    d.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      d.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
      d.y.push_back(y[rows[i]]);
      d.group.push_back(group[rows[i]]);
      if (!patient.empty()) d.patient.push_back(patient[rows[i]]);
    }
    return d;
  }
};

inline std::vector<std::size_t> class_counts(const Dataset& d) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.classes), 0);
  for (int c : d.y) ++counts.at(static_cast<std::size_t>(c));
  return counts;
}

// Every class is down-sampled without replacement to the minority count.
// Selected rows keep their original relative order.
inline Dataset balanced_sample(const Dataset& d, std::uint64_t seed) {
  const auto counts = class_counts(d);
  for (int c = 0; c < d.classes; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0) throw DataError("balanced_sample: class " + std::to_string(c) + " is empty");
  const std::size_t minority = *std::min_element(counts.begin(), counts.end());
  std::vector<std::size_t> keep;
  for (int c = 0; c < d.classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.y[i] == c) rows.push_back(i);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    shuffle_in_place(rows, rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(minority));
  }
  std::sort(keep.begin(), keep.end());
  return d.subset(keep);
}

struct Split {
  std::vector<std::size_t> train, test;
};

// Patient-level split, stratified by each patient's majority label: a
// fraction of every class's patients goes to training, the rest to test.
inline Split group_split(const Dataset& d, double train_fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < d.size(); ++i) rows_of[d.group[i]].push_back(i);
  std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(d.classes));
  for (const auto& [g, rows] : rows_of) {
    std::vector<int> votes(static_cast<std::size_t>(d.classes), 0);
    for (auto r : rows) ++votes[static_cast<std::size_t>(d.y[r])];
    const auto label = std::max_element(votes.begin(), votes.end()) - votes.begin();
    by_class[static_cast<std::size_t>(label)].push_back(g);
  }
  Split s;
  std::set<std::string> train_groups;
  for (int c = 0; c < d.classes; ++c) {
    auto& groups = by_class[static_cast<std::size_t>(c)];
    Rng rng(derive_seed(seed, 0x5b117, static_cast<std::uint64_t>(c)));
    shuffle_in_place(groups, rng);
    auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(groups.size())));
    if (groups.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, groups.size() - 1);
    train_groups.insert(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, groups.size())));
  }
  for (std::size_t i = 0; i < d.size(); ++i) (train_groups.count(d.group[i]) ? s.train : s.test).push_back(i);
  return s;
}

enum class ClassifierKind { Svm, Knn, Gbt };

inline const char* to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::Svm: return "svm";
    case ClassifierKind::Knn: return "knn";
    case ClassifierKind::Gbt: return "gbt";
  }
  return "?";
}

struct ExperimentConfig {
  ClassifierKind classifier = ClassifierKind::Svm;
  SvmConfig svm;
  GbtConfig gbt;
  int knn_k = 3;
  int n_runs = 10;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  std::optional<int> pca_dim;  // condense latents (fit on the training split)
  bool fuse_demographics = false;
};

struct MetricReport {
  RunMetrics mean;
  double avg = 0.0;
  int n_runs = 0;
  std::vector<RunMetrics> runs;
  std::vector<double> feature_importance;  // GBT only, averaged over runs
};

inline MetricReport aggregate(const std::vector<RunMetrics>& runs) {
  MetricReport r;
  r.runs = runs;
  r.n_runs = static_cast<int>(runs.size());
  for (const auto& m : runs) {
    r.mean.auroc += m.auroc;
    r.mean.accuracy += m.accuracy;
    r.mean.sensitivity += m.sensitivity;
    r.mean.specificity += m.specificity;
    r.mean.precision += m.precision;
    r.mean.f1 += m.f1;
  }
  const double n = runs.empty() ? 1.0 : static_cast<double>(runs.size());
  r.mean.auroc /= n;
  r.mean.accuracy /= n;
  r.mean.sensitivity /= n;
  r.mean.specificity /= n;
  r.mean.precision /= n;
  r.mean.f1 /= n;
  r.avg = r.mean.avg();
  return r;
}

namespace detail {

[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& ctx) {
  const std::string msg = ctx + ": " + e.what();
  switch (e.code()) {
    case ExitCode::Config: throw ConfigError(msg);
    case ExitCode::Numeric: throw NumericError(msg);
    default: throw DataError(msg);
  }
}

inline Eigen::MatrixXd condense(const Dataset& d, const PcaModel* pca, bool fuse) {
  if (!pca && !fuse) return d.x;
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    LatentVector lv;
    const Eigen::RowVectorXd row = d.x.row(i);
    lv.values.assign(row.data(), row.data() + row.size());
    if (pca) lv = pca_transform(*pca, lv);
    if (fuse) {
      if (d.patient.empty()) throw DataError("fusion requested but dataset has no demographics");
      lv = fuse_demographics(lv, d.patient[static_cast<std::size_t>(i)]);
    }
    rows.push_back(std::move(lv.values));
  }
  Eigen::MatrixXd out(d.x.rows(), static_cast<Eigen::Index>(rows.empty() ? 0 : rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return out;
}

}  // namespace detail

struct RunOutcome {
  RunMetrics metrics;
  std::vector<double> importance;
};

// One iteration of balanced sampling, patient split, fit and evaluation.
inline RunOutcome run_once(const Dataset& data, const ExperimentConfig& cfg, std::uint64_t run_seed) {
  std::string stage = "balanced_sample";
  try {
    const Dataset bal = balanced_sample(data, derive_seed(run_seed, 1));
    stage = "split";
    const auto split = group_split(bal, cfg.train_fraction, derive_seed(run_seed, 2));
    std::set<std::string> train_groups;
    for (auto i : split.train) train_groups.insert(bal.group[i]);
    for (auto i : split.test)
      if (train_groups.count(bal.group[i])) throw DataError("patient " + bal.group[i] + " appears in train and test");
    if (split.test.empty() || split.train.empty()) throw DataError("empty train or test split");
    Dataset train = bal.subset(split.train), test = bal.subset(split.test);

    std::optional<PcaModel> pca;
    if (cfg.pca_dim) {
      stage = "pca";
      pca = pca_fit(train.x, *cfg.pca_dim);
    }
    const Eigen::MatrixXd xtr = detail::condense(train, pca ? &*pca : nullptr, cfg.fuse_demographics);
    const Eigen::MatrixXd xte = detail::condense(test, pca ? &*pca : nullptr, cfg.fuse_demographics);

    stage = std::string("fit ") + to_string(cfg.classifier);
    std::vector<int> pred(test.size());
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(test.size()), data.classes);
    RunOutcome out;
    switch (cfg.classifier) {
      case ClassifierKind::Svm: {
        const auto m = svm_fit(xtr, train.y, data.classes, cfg.svm);
        stage = "evaluate";
        for (Eigen::Index i = 0; i < xte.rows(); ++i) {
          auto p = svm_predict(m, xte.row(i));
          pred[static_cast<std::size_t>(i)] = p.label;
          scores.row(i) = p.scores;
        }
        break;
      }
      case ClassifierKind::Knn: {
        const auto m = knn_fit(xtr, train.y, data.classes, cfg.knn_k);
        stage = "evaluate";
        for (Eigen::Index i = 0; i < xte.rows(); ++i) {
          auto p = knn_predict(m, xte.row(i));
          pred[static_cast<std::size_t>(i)] = p.label;
          scores.row(i) = p.scores;
        }
        break;
      }
      case ClassifierKind::Gbt: {
        const auto m = gbt_fit(xtr, train.y, data.classes, cfg.gbt);
        stage = "evaluate";
        for (Eigen::Index i = 0; i < xte.rows(); ++i) {
          auto p = gbt_predict(m, xte.row(i));
          pred[static_cast<std::size_t>(i)] = p.label;
          scores.row(i) = p.scores;
        }
        out.importance = gbt_feature_importance(m);
        break;
      }
    }
    stage = "metrics";
    out.metrics = compute_metrics(test.y, pred, scores, data.classes, nullptr);
    return out;
  } catch (const Error& e) {
    detail::rethrow_with_context(e, "stage " + stage + " (seed " + std::to_string(run_seed) + ")");
  }
}

inline MetricReport run_experiment(const Dataset& data, const ExperimentConfig& cfg) {
  if (cfg.n_runs < 1) throw ConfigError("n_runs must be >= 1");
  std::vector<RunMetrics> runs;
  std::vector<double> importance;
  for (int r = 0; r < cfg.n_runs; ++r) {
    auto out = run_once(data, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    runs.push_back(out.metrics);
    if (!out.importance.empty()) {
      importance.resize(out.importance.size(), 0.0);
      for (std::size_t i = 0; i < importance.size(); ++i) importance[i] += out.importance[i] / cfg.n_runs;
    }
  }
  auto report = aggregate(runs);
  report.feature_importance = std::move(importance);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const RunMetrics& m) {
  return {{"auroc", m.auroc},         {"accuracy", m.accuracy}, {"sensitivity", m.sensitivity},
          {"specificity", m.specificity}, {"precision", m.precision}, {"f1", m.f1}, {"avg", m.avg()}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = to_json(r.mean);
  j["avg"] = r.avg;
  j["n_runs"] = r.n_runs;
  j["runs"] = nlohmann::json::array();
  for (const auto& m : r.runs) j["runs"].push_back(to_json(m));
  if (!r.feature_importance.empty()) j["feature_importance"] = r.feature_importance;
  return j;
}

inline constexpr const char* kAveragingFooter =
    "Multiclass sensitivity, specificity, precision, F1 and AUROC are one-vs-rest macro averages; "
    "binary targets report the positive class.";

// Rows follow AUROC, Accuracy, Sensitivity, Specificity, Precision, F1, Avg.
// A null cell (a failed experiment) prints as n/a.
inline std::string render_markdown_table(const std::string& title, const std::vector<std::string>& columns,
                                         const std::vector<const MetricReport*>& cells) {
  std::ostringstream out;
  out << "### " << title << "\n\n|             |";
  for (const auto& c : columns) out << ' ' << c << " |";
  out << "\n|-------------|";
  for (std::size_t i = 0; i < columns.size(); ++i) out << "------:|";
  out << '\n' << std::fixed << std::setprecision(3);
  auto row = [&](const char* name, auto value) {
    out << "| " << std::left << std::setw(11) << name << " |" << std::right;
    for (const auto* c : cells) {
      if (c) out << ' ' << value(*c) << " |";
      else out << " n/a |";
    }
    out << '\n';
  };
  row("AUROC", [](const MetricReport& r) { return r.mean.auroc; });
  row("Accuracy", [](const MetricReport& r) { return r.mean.accuracy; });
  row("Sensitivity", [](const MetricReport& r) { return r.mean.sensitivity; });
  row("Specificity", [](const MetricReport& r) { return r.mean.specificity; });
  row("Precision", [](const MetricReport& r) { return r.mean.precision; });
  row("F1", [](const MetricReport& r) { return r.mean.f1; });
  row("Avg.", [](const MetricReport& r) { return r.avg; });
  out << "\n_" << kAveragingFooter << "_\n";
  return out.str();
}

inline RunMetrics run_metrics_from_json(const nlohmann::json& j) {
  RunMetrics m;
  m.auroc = j.at("auroc").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  m.sensitivity = j.at("sensitivity").get<double>();
  m.specificity = j.at("specificity").get<double>();
  m.precision = j.at("precision").get<double>();
  m.f1 = j.at("f1").get<double>();
  return m;
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  std::vector<RunMetrics> runs;
  for (const auto& r : j.at("runs")) runs.push_back(run_metrics_from_json(r));
  auto report = aggregate(runs);
  if (j.contains("feature_importance")) report.feature_importance = j["feature_importance"].get<std::vector<double>>();
  return report;
}

}  // namespace avfdae
