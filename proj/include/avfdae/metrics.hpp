#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avfdae/error.hpp"

namespace avfdae {

// AUROC as the Mann-Whitney rank statistic with mid-ranks for ties.
inline double auroc(std::span<const int> is_positive, std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (is_positive.size() != n) throw DataError("auroc: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (is_positive[order[k]]) rank_sum += mid;
    i = j;
  }
  for (int p : is_positive) (p ? pos : neg)++;
  if (pos == 0 || neg == 0) throw DataError("auroc: needs both positive and negative samples");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  // Numerator is a multiple of 0.5, so it is exact in double.
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct RunMetrics {
  double auroc = 0, accuracy = 0, sensitivity = 0, specificity = 0, precision = 0, f1 = 0;

  double avg() const { return (auroc + accuracy + sensitivity + specificity + precision + f1) / 6.0; }
};

inline std::vector<std::vector<long>> confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int classes) {
  std::vector<std::vector<long>> cm(static_cast<std::size_t>(classes), std::vector<long>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= classes || y_pred[i] < 0 || y_pred[i] >= classes)
      throw DataError("confusion_matrix: label out of range");
    ++cm[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return cm;
}

namespace detail {

inline double ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

struct ClassStats {
  double sensitivity, specificity, precision, f1;
};

inline ClassStats one_vs_rest(const std::vector<std::vector<long>>& cm, std::size_t c) {
  long tp = cm[c][c], fn = 0, fp = 0, tn = 0;
  for (std::size_t i = 0; i < cm.size(); ++i)
    for (std::size_t j = 0; j < cm.size(); ++j) {
      if (i == c && j != c) fn += cm[i][j];
      if (i != c && j == c) fp += cm[i][j];
      if (i != c && j != c) tn += cm[i][j];
    }
  ClassStats s{};
  s.sensitivity = ratio(tp, tp + fn);
  s.specificity = ratio(tn, tn + fp);
  s.precision = ratio(tp, tp + fp);
  s.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  return s;
}

}  // namespace detail

// scores: n x classes, higher means more likely. Two classes: metrics of the
// positive class (label 1). Three or more: one-vs-rest macro averages over
// the classes present in y_true; absent classes are skipped with a warning.
inline RunMetrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, const Eigen::MatrixXd& scores,
                                  int classes, std::ostream* warn = &std::cerr) {
  const std::size_t n = y_true.size();
  if (y_pred.size() != n || static_cast<std::size_t>(scores.rows()) != n || scores.cols() != classes)
    throw DataError("compute_metrics: length mismatch");
  if (n == 0) throw DataError("compute_metrics: empty evaluation set");
  const auto cm = confusion_matrix(y_true, y_pred, classes);
  RunMetrics m;
  long correct = 0;
  for (int c = 0; c < classes; ++c) correct += cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  m.accuracy = detail::ratio(correct, static_cast<long>(n));

  auto class_auroc = [&](int c) {
    std::vector<int> pos(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = y_true[i] == c;
      s[i] = scores(static_cast<Eigen::Index>(i), c);
    }
    return auroc(pos, s);
  };

  if (classes == 2) {
    const auto s = detail::one_vs_rest(cm, 1);
    m.sensitivity = s.sensitivity;
    m.specificity = s.specificity;
    m.precision = s.precision;
    m.f1 = s.f1;
    const bool both = std::count(y_true.begin(), y_true.end(), 1) > 0 && std::count(y_true.begin(), y_true.end(), 0) > 0;
    m.auroc = both ? class_auroc(1) : 0.5;
    return m;
  }

  int present = 0;
  for (int c = 0; c < classes; ++c) {
    const auto cnt = std::count(y_true.begin(), y_true.end(), c);
    if (cnt == 0) {
      if (warn) *warn << "warning: class " << c << " absent from y_true; excluded from macro averages\n";
      continue;
    }
    const auto s = detail::one_vs_rest(cm, static_cast<std::size_t>(c));
    m.sensitivity += s.sensitivity;
    m.specificity += s.specificity;
    m.precision += s.precision;
    m.f1 += s.f1;
    m.auroc += static_cast<std::size_t>(cnt) < n ? class_auroc(c) : 0.5;
    ++present;
  }
  m.sensitivity /= present;
  m.specificity /= present;
  m.precision /= present;
  m.f1 /= present;
  m.auroc /= present;
  return m;
}

}  // namespace avfdae
