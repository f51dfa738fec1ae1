#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avfdae/error.hpp"

namespace avfdae {

enum class Multiclass { OneVsRest, OneVsOne };

struct SvmConfig {
  double C = 10.0;
  double gamma = 0.0;  // <= 0 selects 1 / (n_features * var(X))
  Multiclass multiclass = Multiclass::OneVsRest;
  double tolerance = 1e-3;
  long max_iter = 10'000'000;
};

// Binary RBF machine: f(x) = sum_i coef_i K(sv_i, x) - rho with coef = alpha*y.
struct BinarySvm {
  Eigen::MatrixXd support;
  Eigen::VectorXd coef;
  double rho = 0.0;
  double gamma = 1.0;

  double decision(const Eigen::RowVectorXd& x) const {
    double f = -rho;
    for (Eigen::Index i = 0; i < support.rows(); ++i) f += coef(i) * std::exp(-gamma * (support.row(i) - x).squaredNorm());
    return f;
  }
};

struct SmoResult {
  Eigen::VectorXd alpha;
  double rho = 0.0;
  long iterations = 0;
  double gap = 0.0;  // m(alpha) - M(alpha) at exit
};

inline Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& x, double gamma) {
  const Eigen::Index n = x.rows();
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd k = x * x.transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-gamma * std::max(0.0, sq(i) + sq(j) - 2.0 * k(i, j)));
  return k;
}

// Solves min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0 with second-order working
// set selection. y entries are +1/-1.
inline SmoResult smo_solve(const Eigen::MatrixXd& kernel, const std::vector<int>& y, double C, double eps, long max_iter) {
  const auto n = static_cast<Eigen::Index>(y.size());
  constexpr double tau = 1e-12;
  SmoResult r;
  r.alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);
  auto Q = [&](Eigen::Index i, Eigen::Index j) { return y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(j)] * kernel(i, j); };
  auto in_up = [&](Eigen::Index t) {
    return (y[static_cast<std::size_t>(t)] == 1 && r.alpha(t) < C) || (y[static_cast<std::size_t>(t)] == -1 && r.alpha(t) > 0);
  };
  auto in_low = [&](Eigen::Index t) {
    return (y[static_cast<std::size_t>(t)] == 1 && r.alpha(t) > 0) || (y[static_cast<std::size_t>(t)] == -1 && r.alpha(t) < C);
  };

  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    Eigen::Index i = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t)
      if (in_up(t) && -y[static_cast<std::size_t>(t)] * grad(t) >= gmax) {
        gmax = -y[static_cast<std::size_t>(t)] * grad(t);
        i = t;
      }
    Eigen::Index j = -1;
    double gmin = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[static_cast<std::size_t>(t)] * grad(t);
      gmin = std::min(gmin, v);
      const double b = gmax - v;
      if (i >= 0 && b > 0) {
        double a = kernel(i, i) + kernel(t, t) - 2.0 * kernel(i, t);
        if (a <= 0) a = tau;
        if (-(b * b) / a <= best) {
          best = -(b * b) / a;
          j = t;
        }
      }
    }
    r.gap = gmax - gmin;
    if (i < 0 || j < 0 || r.gap < eps) break;

    const double yi = y[static_cast<std::size_t>(i)], yj = y[static_cast<std::size_t>(j)];
    double a = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
    if (a <= 0) a = tau;
    const double old_ai = r.alpha(i), old_aj = r.alpha(j);
    const double b = -yi * grad(i) + yj * grad(j);
    double ai = old_ai + yi * b / a;
    double aj = old_aj - yj * b / a;
    // Project back onto the feasible segment y_i a_i + y_j a_j = const.
    const double sum = yi * old_ai + yj * old_aj;
    ai = std::clamp(ai, 0.0, C);
    aj = yj * (sum - yi * ai);
    aj = std::clamp(aj, 0.0, C);
    ai = yi * (sum - yj * aj);
    r.alpha(i) = ai;
    r.alpha(j) = aj;
    const double dai = ai - old_ai, daj = aj - old_aj;
    for (Eigen::Index t = 0; t < n; ++t) grad(t) += Q(t, i) * dai + Q(t, j) * daj;
  }

  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  long n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[static_cast<std::size_t>(t)] * grad(t);
    if (r.alpha(t) >= C) {
      if (y[static_cast<std::size_t>(t)] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (r.alpha(t) <= 0) {
      if (y[static_cast<std::size_t>(t)] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  r.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  return r;
}

// Largest KKT violation m(alpha) - M(alpha) of a dual solution.
inline double kkt_violation(const Eigen::MatrixXd& kernel, const std::vector<int>& y, const Eigen::VectorXd& alpha, double C) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index s = 0; s < n; ++s)
      grad(t) += y[static_cast<std::size_t>(t)] * y[static_cast<std::size_t>(s)] * kernel(t, s) * alpha(s);
  double up = -std::numeric_limits<double>::infinity(), low = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    const int yt = y[static_cast<std::size_t>(t)];
    const double v = -yt * grad(t);
    if ((yt == 1 && alpha(t) < C) || (yt == -1 && alpha(t) > 0)) up = std::max(up, v);
    if ((yt == 1 && alpha(t) > 0) || (yt == -1 && alpha(t) < C)) low = std::min(low, v);
  }
  return std::max(0.0, up - low);
}

inline double default_gamma(const Eigen::MatrixXd& x) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return var > 0.0 ? 1.0 / (static_cast<double>(x.cols()) * var) : 1.0;
}

inline BinarySvm fit_binary_svm(const Eigen::MatrixXd& x, const std::vector<int>& y_pm, double C, double gamma, double eps,
                                long max_iter, SmoResult* dual = nullptr) {
  const Eigen::MatrixXd k = rbf_kernel_matrix(x, gamma);
  auto r = smo_solve(k, y_pm, C, eps, max_iter);
  BinarySvm m;
  m.gamma = gamma;
  m.rho = r.rho;
  std::vector<Eigen::Index> sv;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (r.alpha(i) > 0) sv.push_back(i);
  m.support.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  m.coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    m.support.row(static_cast<Eigen::Index>(s)) = x.row(sv[s]);
    m.coef(static_cast<Eigen::Index>(s)) = r.alpha(sv[s]) * y_pm[static_cast<std::size_t>(sv[s])];
  }
  if (dual) *dual = std::move(r);
  return m;
}

struct SvmModel {
  int classes = 0;
  Multiclass multiclass = Multiclass::OneVsRest;
  std::vector<BinarySvm> machines;           // OvR: one per class; OvO: one per pair
  std::vector<std::pair<int, int>> pairs;    // OvO only
  double gamma = 1.0;
};

inline SvmModel svm_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int classes, const SvmConfig& cfg) {
  if (!(cfg.C > 0)) throw ConfigError("svm: C must be positive");
  if (!x.allFinite()) throw DataError("svm: non-finite feature");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DataError("svm: feature/label count mismatch");
  std::vector<int> present;
  for (int c = 0; c < classes; ++c)
    if (std::count(y.begin(), y.end(), c) > 0) present.push_back(c);
  if (present.size() < 2) throw DataError("svm: training set has a single class");

  SvmModel m;
  m.classes = classes;
  m.multiclass = cfg.multiclass;
  m.gamma = cfg.gamma > 0 ? cfg.gamma : default_gamma(x);
  if (cfg.multiclass == Multiclass::OneVsRest) {
    for (int c = 0; c < classes; ++c) {
      std::vector<int> ypm(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) ypm[i] = y[i] == c ? 1 : -1;
      if (std::count(ypm.begin(), ypm.end(), 1) == 0) {
        // Absent class: constant -1 machine.
        BinarySvm empty;
        empty.gamma = m.gamma;
        empty.rho = 1.0;
        empty.support.resize(0, x.cols());
        m.machines.push_back(empty);
        continue;
      }
      m.machines.push_back(fit_binary_svm(x, ypm, cfg.C, m.gamma, cfg.tolerance, cfg.max_iter));
    }
  } else {
    for (std::size_t a = 0; a < present.size(); ++a)
      for (std::size_t b = a + 1; b < present.size(); ++b) {
        std::vector<Eigen::Index> rows;
        std::vector<int> ypm;
        for (std::size_t i = 0; i < y.size(); ++i)
          if (y[i] == present[a] || y[i] == present[b]) {
            rows.push_back(static_cast<Eigen::Index>(i));
            ypm.push_back(y[i] == present[a] ? 1 : -1);
          }
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), x.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
        m.machines.push_back(fit_binary_svm(sub, ypm, cfg.C, m.gamma, cfg.tolerance, cfg.max_iter));
        m.pairs.emplace_back(present[a], present[b]);
      }
  }
  return m;
}

struct Prediction {
  int label = 0;
  Eigen::RowVectorXd scores;
};

// OvR scores are decision values; OvO scores are vote counts.
inline Prediction svm_predict(const SvmModel& m, const Eigen::RowVectorXd& x) {
  Prediction p;
  p.scores = Eigen::RowVectorXd::Zero(m.classes);
  if (m.multiclass == Multiclass::OneVsRest) {
    for (int c = 0; c < m.classes; ++c) p.scores(c) = m.machines[static_cast<std::size_t>(c)].decision(x);
  } else {
    for (std::size_t k = 0; k < m.machines.size(); ++k) {
      const auto [a, b] = m.pairs[k];
      p.scores(m.machines[k].decision(x) > 0 ? a : b) += 1.0;
    }
  }
  Eigen::Index arg;
  p.scores.maxCoeff(&arg);
  p.label = static_cast<int>(arg);
  return p;
}

}  // namespace avfdae
