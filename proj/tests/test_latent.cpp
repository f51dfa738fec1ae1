#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "avfdae/latent.hpp"
#include "test_util.hpp"

using namespace avfdae;

namespace {

LatentVector make_latent(std::vector<double> v, const std::string& id = "P001", int variant = -1) {
  LatentVector l;
  l.values = std::move(v);
  l.provenance.patient_id = id;
  l.provenance.variant = variant;
  return l;
}

Eigen::MatrixXd gaussian_cloud(Eigen::Index n, Eigen::Index d, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

// Correlated data with a known decaying spectrum.
Eigen::MatrixXd anisotropic_cloud(Eigen::Index n, unsigned seed) {
  Eigen::MatrixXd x = gaussian_cloud(n, 6, seed);
  const Eigen::VectorXd scale = (Eigen::VectorXd(6) << 5, 3, 2, 1, 0.5, 0.1).finished();
  x = x * scale.asDiagonal();
  Eigen::MatrixXd mix = gaussian_cloud(6, 6, seed + 1);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(mix);
  const Eigen::MatrixXd q = qr.householderQ();
  return (x * q.transpose()).rowwise() + Eigen::RowVectorXd::LinSpaced(6, -1, 4);
}

}  // namespace

TEST_CASE("Latent extraction", "[latent]") {
  const auto model = nn::make_autoencoder<float>(nn::dense_spec(20, {12, 100}), 3);
  nn::Mat<float> x(20, 14);
  const auto v = testutil::random_signal(20 * 14, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(v[static_cast<std::size_t>(i)]);
  std::vector<Provenance> prov;
  for (int k = 0; k < 14; ++k) prov.push_back({"P007", SiteTag::Site2, 1, "noisy-to-clean", k});
  const auto a = extract_latents(model, x, prov, 5);
  REQUIRE(a.size() == 14);
  CHECK(a.front().dim() == 100);
  CHECK(a[13].provenance.variant == 13);
  CHECK(a[13].provenance.patient_id == "P007");
  const auto again = extract_latents(model, x, prov, 5);
  const auto b = extract_latents(model, x, prov, 64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].values == again[i].values);
    // Batch width changes the GEMM blocking, so only rounding may differ.
    for (std::size_t k = 0; k < a[i].dim(); ++k) CHECK(std::abs(a[i].values[k] - b[i].values[k]) < 1e-4);
  }
  prov.pop_back();
  REQUIRE_THROWS_AS(extract_latents(model, x, prov), DataError);
  REQUIRE_THROWS_AS(extract_latents(model, nn::Mat<float>(nn::Mat<float>::Zero(19, 1)), std::span<const Provenance>(prov).first(1)),
                    DataError);
}

TEST_CASE("Site combination", "[latent]") {
  const auto l2 = make_latent(testutil::random_signal(100, 1));
  const auto l3 = make_latent(testutil::random_signal(100, 2));
  const auto self = combine_sites(l2, l2, SiteOp::Subtract);
  for (double v : self.values) CHECK(v == 0.0);
  CHECK(combine_sites(l2, l3, SiteOp::Concat).dim() == 200);
  CHECK(combine_sites(l2, l3, SiteOp::Subtract).provenance.site == SiteTag::Subtract23);

  const auto sub = combine_sites(l2, l3, SiteOp::Subtract), add = combine_sites(l2, l3, SiteOp::Add);
  const auto swapped = combine_sites(l3, l2, SiteOp::Subtract);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(std::abs(sub.values[i] + add.values[i] - 2 * l2.values[i]) < 1e-12);
    CHECK(swapped.values[i] == -sub.values[i]);
  }

  REQUIRE_THROWS_AS(combine_sites(l2, make_latent(l3.values, "P002"), SiteOp::Subtract), DataError);
  REQUIRE_THROWS_AS(combine_sites(l2, make_latent(l3.values, "P001", 4), SiteOp::Subtract), DataError);
  REQUIRE_THROWS_AS(combine_sites(l2, make_latent({1.0}), SiteOp::Add), DataError);
}

TEST_CASE("PCA on rank-one data", "[latent]") {
  Eigen::MatrixXd x(50, 2);
  for (int i = 0; i < 50; ++i) x.row(i) << 0.3 * i - 2, -0.6 * i + 7;
  const auto m = pca_fit(x, 1);
  CHECK(std::abs(m.explained_ratio(0) - 1.0) < 1e-10);
  CHECK(std::abs(std::abs(m.components(0, 0)) - 1 / std::sqrt(5.0)) < 1e-10);
}

TEST_CASE("PCA on an isotropic cloud", "[latent]") {
  const auto m = pca_fit(gaussian_cloud(10000, 10, 7), 10);
  for (Eigen::Index k = 0; k < 10; ++k) CHECK(std::abs(m.explained_ratio(k) - 0.1) < 0.02);
}

TEST_CASE("PCA projection covariance and orthonormality", "[latent]") {
  const Eigen::MatrixXd x = anisotropic_cloud(400, 11);
  const auto m = pca_fit(x, 4);
  CHECK((m.components * m.components.transpose() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index k = 1; k < m.eigenvalues.size(); ++k) CHECK(m.eigenvalues(k) <= m.eigenvalues(k - 1));

  Eigen::MatrixXd y(x.rows(), 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd row = x.row(i).transpose();
    const auto t = pca_transform(m, make_latent({row.data(), row.data() + row.size()}));
    for (int k = 0; k < 4; ++k) y(i, k) = t.values[static_cast<std::size_t>(k)];
  }
  const Eigen::MatrixXd centered = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  const Eigen::MatrixXd expect = m.eigenvalues.head(4).asDiagonal();
  CHECK((cov - expect).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("PCA transform is affine and loses the discarded mass", "[latent]") {
  const Eigen::MatrixXd x = anisotropic_cloud(300, 21);
  const auto m = pca_fit(x, 3);
  const std::vector<double> mu(m.mean.data(), m.mean.data() + m.mean.size());
  for (double v : pca_transform(m, make_latent(mu)).values) CHECK(std::abs(v) < 1e-12);

  const auto a = testutil::random_signal(6, 1), b = testutil::random_signal(6, 2);
  std::vector<double> ab(6), zero(6, 0.0);
  for (int i = 0; i < 6; ++i) ab[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(i)];
  const auto ta = pca_transform(m, make_latent(a)), tb = pca_transform(m, make_latent(b));
  const auto tab = pca_transform(m, make_latent(ab)), t0 = pca_transform(m, make_latent(zero));
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(ta.values[k] + tb.values[k] - tab.values[k] - t0.values[k]) < 1e-12);

  // Mean squared residual over the training set equals the discarded eigenvalue mass.
  double residual = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd row = x.row(i).transpose();
    const auto back = pca_inverse(m, pca_transform(m, make_latent({row.data(), row.data() + row.size()})));
    for (Eigen::Index j = 0; j < 6; ++j) residual += std::pow(back[static_cast<std::size_t>(j)] - row(j), 2);
  }
  residual /= static_cast<double>(x.rows() - 1);
  CHECK(std::abs(residual - m.eigenvalues.tail(3).sum()) < 1e-6);
}

TEST_CASE("PCA errors", "[latent]") {
  const Eigen::MatrixXd x = anisotropic_cloud(20, 3);
  REQUIRE_THROWS_AS(pca_fit(x, 0), ConfigError);
  REQUIRE_THROWS_AS(pca_fit(x, 7), ConfigError);
  REQUIRE_THROWS_AS(pca_fit(x.topRows(3), 3), DataError);
  Eigen::MatrixXd flat(10, 3);
  for (int i = 0; i < 10; ++i) flat.row(i) << i, 2 * i, 0;
  REQUIRE_THROWS_AS(pca_fit(flat, 2), DataError);
  const auto m = pca_fit(x, 2);
  REQUIRE_THROWS_AS(pca_transform(m, make_latent({1, 2})), DataError);
  const auto j = pca_to_json(m);
  CHECK(j["components"].size() == 2);
  CHECK(j["mu"].size() == 6);
  CHECK(j["ratios"].size() == 2);
}

TEST_CASE("Demographic fusion layout", "[latent]") {
  PatientRecord p;
  p.patient_id = "P001";
  p.gender = Gender::Male;
  p.age = 64;
  p.htn = true;
  p.dm = false;
  const auto f = fuse_demographics(make_latent({0.5, -1.5}), p);
  REQUIRE(f.dim() == 2 + kDemographicWidth);
  const std::vector<double> expect{0.5, -1.5, 1.0, std::log1p(64.0), 1.0, 0.0};
  CHECK(f.values == expect);
  CHECK(fuse_demographics(make_latent({0.5, -1.5}), p).values == f.values);

  p.gender = Gender::Female;
  p.age = 0;
  p.htn = false;
  p.dm = true;
  const auto g = fuse_demographics(make_latent({0.0}), p);
  CHECK(g.values == std::vector<double>{0.0, 0.0, 0.0, 0.0, 1.0});

  p.age = -1;
  REQUIRE_THROWS_AS(fuse_demographics(make_latent({0.0}), p), DataError);
  CHECK(fused_feature_names(2) == std::vector<std::string>{"S1", "S2", "gender", "age", "htn", "dm"});
}

TEST_CASE("Latent CSV", "[latent]") {
  std::vector<LatentVector> ls{make_latent({1.25, -2}, "P003", 2)};
  ls[0].provenance.site = SiteTag::Subtract23;
  ls[0].provenance.scheme = "noisy-to-clean";
  std::ostringstream out;
  write_latents_csv(out, ls);
  CHECK(out.str() == "patient_id,site,level,scheme,variant,v0,v1\nP003,site2-3,1,noisy-to-clean,2,1.25,-2\n");
}
