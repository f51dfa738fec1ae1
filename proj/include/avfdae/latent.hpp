#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "avfdae/error.hpp"
#include "avfdae/nnet.hpp"
#include "avfdae/signal_io.hpp"

namespace avfdae {

enum class SiteTag { Site2, Site3, Subtract23, Add23, Concat23 };

inline const char* to_string(SiteTag s) {
  switch (s) {
    case SiteTag::Site2: return "site2";
    case SiteTag::Site3: return "site3";
    case SiteTag::Subtract23: return "site2-3";
    case SiteTag::Add23: return "site2+3";
    case SiteTag::Concat23: return "site2|3";
  }
  return "?";
}

struct Provenance {
  std::string patient_id;
  SiteTag site = SiteTag::Site2;
  int level = 1;
  std::string scheme;
  int variant = -1;  // -1: clean recording; otherwise index among the 14 noisy variants
};

struct LatentVector {
  std::vector<double> values;
  Provenance provenance;

  std::size_t dim() const { return values.size(); }
};

// One latent per column of `features`; provenance[i] describes column i.
template <typename Scalar>
std::vector<LatentVector> extract_latents(const nn::AutoencoderModel<Scalar>& model, const nn::Mat<Scalar>& features,
                                          std::span<const Provenance> provenance, Eigen::Index chunk = 64) {
  if (static_cast<std::size_t>(features.rows()) != model.input_width())
    throw DataError("extract_latents: feature width " + std::to_string(features.rows()) + " != model input width " +
                    std::to_string(model.input_width()));
  if (static_cast<std::size_t>(features.cols()) != provenance.size())
    throw DataError("extract_latents: provenance count does not match feature count");
  std::vector<LatentVector> out;
  out.reserve(provenance.size());
  for (Eigen::Index start = 0; start < features.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, features.cols() - start);
    const nn::Mat<Scalar> z = nn::encode(model, nn::Mat<Scalar>(features.middleCols(start, n)));
    for (Eigen::Index j = 0; j < n; ++j) {
      LatentVector lv;
      lv.values.resize(static_cast<std::size_t>(z.rows()));
      for (Eigen::Index r = 0; r < z.rows(); ++r) lv.values[static_cast<std::size_t>(r)] = static_cast<double>(z(r, j));
      lv.provenance = provenance[static_cast<std::size_t>(start + j)];
      out.push_back(std::move(lv));
    }
  }
  return out;
}

enum class SiteOp { Subtract, Concat, Add };

inline LatentVector combine_sites(const LatentVector& l2, const LatentVector& l3, SiteOp op) {
  if (l2.provenance.patient_id != l3.provenance.patient_id)
    throw DataError("combine_sites: patient mismatch (" + l2.provenance.patient_id + " vs " + l3.provenance.patient_id + ")");
  if (l2.provenance.variant != l3.provenance.variant) throw DataError("combine_sites: variant mismatch");
  if (l2.dim() != l3.dim()) throw DataError("combine_sites: dimension mismatch");
  LatentVector out;
  out.provenance = l2.provenance;
  switch (op) {
    case SiteOp::Subtract:
      out.provenance.site = SiteTag::Subtract23;
      out.values.resize(l2.dim());
      for (std::size_t i = 0; i < l2.dim(); ++i) out.values[i] = l2.values[i] - l3.values[i];
      break;
    case SiteOp::Add:
      out.provenance.site = SiteTag::Add23;
      out.values.resize(l2.dim());
      for (std::size_t i = 0; i < l2.dim(); ++i) out.values[i] = l2.values[i] + l3.values[i];
      break;
    case SiteOp::Concat:
      out.provenance.site = SiteTag::Concat23;
      out.values = l2.values;
      out.values.insert(out.values.end(), l3.values.begin(), l3.values.end());
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // dim_out x dim_in, orthonormal rows
  Eigen::VectorXd eigenvalues;  // all eigenvalues, descending
  Eigen::VectorXd explained_ratio;  // first dim_out entries of eigenvalues / total

  Eigen::Index dim_in() const { return components.cols(); }
  Eigen::Index dim_out() const { return components.rows(); }
};

inline Eigen::MatrixXd to_matrix(std::span<const LatentVector> latents) {
  if (latents.empty()) return {};
  Eigen::MatrixXd x(static_cast<Eigen::Index>(latents.size()), static_cast<Eigen::Index>(latents.front().dim()));
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].dim() != latents.front().dim()) throw DataError("latent dimensions differ");
    for (std::size_t j = 0; j < latents[i].dim(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = latents[i].values[j];
  }
  return x;
}

// Rows of x are samples. Sample covariance uses the n-1 denominator.
inline PcaModel pca_fit(const Eigen::MatrixXd& x, Eigen::Index dim_out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (dim_out < 1 || dim_out > d) throw ConfigError("pca: output dim must be in 1.." + std::to_string(d));
  if (n <= dim_out) throw DataError("pca: need more samples (" + std::to_string(n) + ") than output dims");
  PcaModel m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");
  // Eigen returns ascending order.
  m.eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  const double top = m.eigenvalues(0);
  const Eigen::Index rank = (m.eigenvalues.array() > std::max(top, 1e-300) * 1e-12).count();
  if (rank < dim_out)
    throw DataError("pca: covariance rank " + std::to_string(rank) + " < requested dim " + std::to_string(dim_out));
  m.components.resize(dim_out, d);
  for (Eigen::Index k = 0; k < dim_out; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;  // deterministic sign
    m.components.row(k) = v.transpose();
  }
  const double total = m.eigenvalues.sum();
  m.explained_ratio = m.eigenvalues.head(dim_out) / total;
  return m;
}

inline PcaModel pca_fit(std::span<const LatentVector> latents, Eigen::Index dim_out) {
  return pca_fit(to_matrix(latents), dim_out);
}

inline LatentVector pca_transform(const PcaModel& m, const LatentVector& v) {
  if (static_cast<Eigen::Index>(v.dim()) != m.dim_in())
    throw DataError("pca_transform: dim " + std::to_string(v.dim()) + " != model dim " + std::to_string(m.dim_in()));
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.values.data(), m.dim_in());
  const Eigen::VectorXd y = m.components * (x - m.mean);
  LatentVector out;
  out.provenance = v.provenance;
  out.values.assign(y.data(), y.data() + y.size());
  return out;
}

inline std::vector<double> pca_inverse(const PcaModel& m, const LatentVector& condensed) {
  if (static_cast<Eigen::Index>(condensed.dim()) != m.dim_out()) throw DataError("pca_inverse: dim mismatch");
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(condensed.values.data(), m.dim_out());
  const Eigen::VectorXd x = m.components.transpose() * y + m.mean;
  return {x.data(), x.data() + x.size()};
}

inline nlohmann::json pca_to_json(const PcaModel& m) {
  nlohmann::json j;
  j["mu"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  std::vector<std::vector<double>> rows;
  for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
    const Eigen::VectorXd row = m.components.row(r).transpose();
    rows.emplace_back(row.data(), row.data() + row.size());
  }
  j["components"] = rows;
  j["ratios"] = std::vector<double>(m.explained_ratio.data(), m.explained_ratio.data() + m.explained_ratio.size());
  return j;
}

// ---------------------------------------------------------------------------
// Demographic fusion
//
// Layout after the condensed coordinates S1..Sd:
//   d+0  gender      1 = male, 0 = female
//   d+1  log1p(age)
//   d+2  htn         1 = yes
//   d+3  dm          1 = yes
inline constexpr std::size_t kDemographicWidth = 4;

inline LatentVector fuse_demographics(const LatentVector& condensed, const PatientRecord& p) {
  if (p.age < 0) throw DataError("fuse_demographics: missing age for " + p.patient_id);
  LatentVector out;
  out.provenance = condensed.provenance;
  out.values = condensed.values;
  out.values.push_back(p.gender == Gender::Male ? 1.0 : 0.0);
  out.values.push_back(std::log1p(static_cast<double>(p.age)));
  out.values.push_back(p.htn ? 1.0 : 0.0);
  out.values.push_back(p.dm ? 1.0 : 0.0);
  return out;
}

inline std::vector<std::string> fused_feature_names(std::size_t condensed_dim) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < condensed_dim; ++i) names.push_back("S" + std::to_string(i + 1));
  names.insert(names.end(), {"gender", "age", "htn", "dm"});
  return names;
}

inline void write_latents_csv(std::ostream& out, std::span<const LatentVector> latents) {
  out << "patient_id,site,level,scheme,variant";
  const std::size_t d = latents.empty() ? 0 : latents.front().dim();
  for (std::size_t i = 0; i < d; ++i) out << ",v" << i;
  out << '\n' << std::setprecision(9);
  for (const auto& l : latents) {
    out << l.provenance.patient_id << ',' << to_string(l.provenance.site) << ',' << l.provenance.level << ','
        << l.provenance.scheme << ',' << l.provenance.variant;
    for (double v : l.values) out << ',' << v;
    out << '\n';
  }
}

}  // namespace avfdae
