#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avfdae/error.hpp"

namespace avfdae {

struct GbtConfig {
  int n_trees = 100;
  double learning_rate = 0.05;
  int max_depth = 6;
  int min_samples_leaf = 5;
  double l2 = 1.0;  // leaf-weight regularizer
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::RowVectorXd& x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct GbtModel {
  int classes = 0;
  int n_features = 0;
  double learning_rate = 0.05;
  std::vector<std::vector<RegressionTree>> rounds;  // rounds[r][class]
  std::vector<double> split_gain;                   // accumulated per feature

  Eigen::RowVectorXd raw_scores(const Eigen::RowVectorXd& x) const {
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(classes);
    for (const auto& round : rounds)
      for (int c = 0; c < classes; ++c) f(c) += learning_rate * round[static_cast<std::size_t>(c)].predict(x);
    return f;
  }
};

namespace detail {

struct TreeBuilder {
  const Eigen::MatrixXd& x;
  const std::vector<double>& g;
  const std::vector<double>& h;
  const GbtConfig& cfg;
  std::vector<double>& gain_acc;
  RegressionTree tree;

  double leaf_value(double G, double H) const { return -G / (H + cfg.l2); }
  double score(double G, double H) const { return G * G / (H + cfg.l2); }

  int build(std::vector<std::size_t> rows, int depth) {
    double G = 0, H = 0;
    for (auto r : rows) {
      G += g[r];
      H += h[r];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({-1, 0.0, -1, -1, leaf_value(G, H)});
    if (depth >= cfg.max_depth || rows.size() < 2 * static_cast<std::size_t>(cfg.min_samples_leaf)) return id;

    const double parent = score(G, H);
    double best_gain = 1e-12;
    int best_feat = -1;
    double best_thr = 0.0;
    std::vector<std::size_t> sorted = rows;
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f); });
      double GL = 0, HL = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        GL += g[sorted[i]];
        HL += h[sorted[i]];
        const double v = x(static_cast<Eigen::Index>(sorted[i]), f), next = x(static_cast<Eigen::Index>(sorted[i + 1]), f);
        if (v == next) continue;
        const std::size_t nl = i + 1, nr = sorted.size() - nl;
        if (nl < static_cast<std::size_t>(cfg.min_samples_leaf) || nr < static_cast<std::size_t>(cfg.min_samples_leaf)) continue;
        const double gain = score(GL, HL) + score(G - GL, H - HL) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feat = static_cast<int>(f);
          best_thr = 0.5 * (v + next);
        }
      }
    }
    if (best_feat < 0) return id;
    gain_acc[static_cast<std::size_t>(best_feat)] += best_gain;
    std::vector<std::size_t> left, right;
    for (auto r : rows) (x(static_cast<Eigen::Index>(r), best_feat) <= best_thr ? left : right).push_back(r);
    const int l = build(std::move(left), depth + 1);
    const int rr = build(std::move(right), depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feat;
    node.threshold = best_thr;
    node.left = l;
    node.right = rr;
    return id;
  }
};

inline Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& f) {
  const Eigen::RowVectorXd e = (f.array() - f.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace detail

// Multiclass softmax boosting: each round fits one depth-limited regression
// tree per class to the Newton step of the cross-entropy loss.
inline GbtModel gbt_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int classes, const GbtConfig& cfg) {
  if (cfg.n_trees < 1) throw ConfigError("gbt: n_trees must be >= 1");
  if (!(cfg.learning_rate > 0 && cfg.learning_rate <= 1)) throw ConfigError("gbt: learning rate must be in (0,1]");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DataError("gbt: feature/label count mismatch");
  int present = 0;
  for (int c = 0; c < classes; ++c) present += std::count(y.begin(), y.end(), c) > 0;
  if (present < 2) throw DataError("gbt: training set has a single class");

  const auto n = static_cast<std::size_t>(x.rows());
  GbtModel m;
  m.classes = classes;
  m.n_features = static_cast<int>(x.cols());
  m.learning_rate = cfg.learning_rate;
  m.split_gain.assign(static_cast<std::size_t>(x.cols()), 0.0);
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(x.rows(), classes);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> g(n), h(n);
  for (int round = 0; round < cfg.n_trees; ++round) {
    Eigen::MatrixXd prob(x.rows(), classes);
    for (Eigen::Index i = 0; i < x.rows(); ++i) prob.row(i) = detail::softmax(raw.row(i));
    std::vector<RegressionTree> trees;
    for (int c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = prob(static_cast<Eigen::Index>(i), c);
        g[i] = p - (y[i] == c ? 1.0 : 0.0);
        h[i] = std::max(p * (1.0 - p), 1e-16);
      }
      detail::TreeBuilder b{x, g, h, cfg, m.split_gain, {}};
      b.build(all, 0);
      for (std::size_t i = 0; i < n; ++i)
        raw(static_cast<Eigen::Index>(i), c) += cfg.learning_rate * b.tree.predict(x.row(static_cast<Eigen::Index>(i)));
      trees.push_back(std::move(b.tree));
    }
    m.rounds.push_back(std::move(trees));
  }
  return m;
}

struct GbtPrediction {
  int label = 0;
  Eigen::RowVectorXd scores;  // class probabilities
};

inline GbtPrediction gbt_predict(const GbtModel& m, const Eigen::RowVectorXd& x) {
  GbtPrediction p;
  p.scores = detail::softmax(m.raw_scores(x));
  Eigen::Index arg;
  p.scores.maxCoeff(&arg);
  p.label = static_cast<int>(arg);
  return p;
}

// Total split gain per feature, normalized to sum to 1.
inline std::vector<double> gbt_feature_importance(const GbtModel& m) {
  std::vector<double> imp = m.split_gain;
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0)
    for (double& v : imp) v /= total;
  return imp;
}

}  // namespace avfdae
