#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "avfdae/error.hpp"

namespace avfdae {

struct KnnModel {
  Eigen::MatrixXd x;
  std::vector<int> y;
  int classes = 0;
  int k = 3;
};

inline KnnModel knn_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int classes, int k = 3) {
  if (k < 1) throw ConfigError("knn: k must be positive");
  if (static_cast<Eigen::Index>(k) > x.rows())
    throw DataError("knn: k=" + std::to_string(k) + " exceeds training size " + std::to_string(x.rows()));
  return {x, y, classes, k};
}

struct KnnPrediction {
  int label = 0;
  Eigen::RowVectorXd scores;  // vote fractions
};

// Majority vote among the k nearest (Euclidean; equal distances keep training
// order). Ties go to the smallest mean neighbor distance, then the lowest class.
inline KnnPrediction knn_predict(const KnnModel& m, const Eigen::RowVectorXd& x) {
  const auto n = static_cast<std::size_t>(m.x.rows());
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = (m.x.row(static_cast<Eigen::Index>(i)) - x).norm();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  std::vector<int> votes(static_cast<std::size_t>(m.classes), 0);
  std::vector<double> dsum(static_cast<std::size_t>(m.classes), 0.0);
  for (int j = 0; j < m.k; ++j) {
    const auto c = static_cast<std::size_t>(m.y[idx[static_cast<std::size_t>(j)]]);
    ++votes[c];
    dsum[c] += dist[idx[static_cast<std::size_t>(j)]];
  }
  int best = -1;
  for (int c = 0; c < m.classes; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    if (votes[uc] == 0) continue;
    if (best < 0) {
      best = c;
      continue;
    }
    const auto ub = static_cast<std::size_t>(best);
    const double mean_c = dsum[uc] / votes[uc], mean_b = dsum[ub] / votes[ub];
    if (votes[uc] > votes[ub] || (votes[uc] == votes[ub] && mean_c < mean_b)) best = c;
  }
  KnnPrediction p;
  p.label = best;
  p.scores.resize(m.classes);
  for (int c = 0; c < m.classes; ++c) p.scores(c) = static_cast<double>(votes[static_cast<std::size_t>(c)]) / m.k;
  return p;
}

}  // namespace avfdae
