#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "upg/baselines.hpp"

using namespace upg;

namespace {

Dataset ratings(int n_users, int n_items, const std::vector<std::tuple<int, int, double>>& triples) {
  Dataset d;
  d.family = Family::Gaussian;
  d.n_users = n_users;
  d.n_items = n_items;
  d.covariates = Matrix::Ones(n_users, 1);
  for (int u = 0; u < n_users; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (int j = 0; j < n_items; ++j) d.item_ids.push_back("i" + std::to_string(j));
  std::int64_t ts = 0;
  for (const auto& [u, j, y] : triples) d.observations.push_back({u, j, y, ts++});
  return d;
}

}  // namespace

TEST_CASE("fit_iis Pearson: identical rating vectors give weight one") {
  Dataset d = ratings(3, 2,
                      {{0, 0, 5.0}, {0, 1, 5.0}, {1, 0, 1.0}, {1, 1, 1.0}, {2, 0, 3.0}, {2, 1, 3.0}});
  IisModel m = fit_iis(d, IisVariant::Pearson);
  CHECK(m.weights(0, 1) == doctest::Approx(1.0));
  CHECK(m.weights(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("fit_iis Pearson drops pairs with fewer than two co-raters") {
  Dataset d = ratings(2, 2, {{0, 0, 5.0}, {0, 1, 4.0}, {1, 0, 1.0}});
  IisModel m = fit_iis(d, IisVariant::Pearson);
  CHECK(m.weights(0, 1) == 0.0);
}

TEST_CASE("fit_iis Jaccard matches the set formula") {
  Dataset d;
  d.family = Family::Bernoulli;
  d.n_users = 3;
  d.n_items = 2;
  d.covariates = Matrix::Ones(3, 1);
  d.user_ids = {"u1", "u2", "u3"};
  d.item_ids = {"j", "k"};
  // clickers(j) = {u1,u2}, clickers(k) = {u2,u3}
  d.observations = {{0, 0, 1.0, 0}, {1, 0, 1.0, 1}, {1, 1, 1.0, 2}, {2, 1, 1.0, 3}, {0, 1, 0.0, 4}};
  IisModel m = fit_iis(d, IisVariant::Jaccard);
  CHECK(m.weights(0, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("fit_iis weights match a brute-force pairwise oracle") {
  auto [data, truth] = synth_generate(20, 5, 1, 0.3, Family::Gaussian, 71, {10, 0.5});
  IisModel m = fit_iis(data, IisVariant::Pearson);
  // oracle: double loop over items, users who rated both
  std::map<std::pair<int, int>, double> per_user_mean;
  std::map<std::pair<int, int>, int> per_user_count;
  for (const auto& o : data.observations) {
    per_user_mean[{o.user, o.item}] += o.response;
    per_user_count[{o.user, o.item}] += 1;
  }
  for (auto& [k, v] : per_user_mean) v /= per_user_count[k];
  for (int i = 0; i < data.n_items; ++i)
    for (int j = i + 1; j < data.n_items; ++j) {
      double sxy = 0, sxx = 0, syy = 0;
      int n = 0;
      for (int u = 0; u < data.n_users; ++u) {
        auto a = per_user_mean.find({u, i});
        auto b = per_user_mean.find({u, j});
        if (a == per_user_mean.end() || b == per_user_mean.end()) continue;
        double da = a->second - m.item_means[i];
        double db = b->second - m.item_means[j];
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
        ++n;
      }
      double expect = (n >= 2 && sxx > 0 && syy > 0) ? sxy / std::sqrt(sxx * syy) : 0.0;
      CHECK(m.weights(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("IIS weights are exactly symmetric") {
  auto [data, truth] = synth_generate(25, 6, 1, 0.3, Family::Gaussian, 73, {8});
  IisModel m = fit_iis(data, IisVariant::Pearson);
  CHECK((m.weights - m.weights.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("predict_iis fallbacks and the single-neighbor case") {
  IisModel m;
  m.variant = IisVariant::Pearson;
  m.weights = Matrix::Zero(3, 3);
  m.weights(0, 1) = m.weights(1, 0) = 1.0;
  m.item_means = Vector::Zero(3);
  m.item_means << 3.0, 2.5, 4.0;
  CHECK(predict_iis(m, {}, 0) == doctest::Approx(3.0));
  // single history item with weight one and deviation +0.5
  CHECK(predict_iis(m, {{1, 3.0}}, 0) == doctest::Approx(3.5));
  // neighbors with zero weight fall back to the item mean
  CHECK(predict_iis(m, {{2, 5.0}}, 0) == doctest::Approx(3.0));
}

TEST_CASE("predict_iis denominator conventions differ only with negative weights") {
  IisModel m;
  m.variant = IisVariant::Pearson;
  m.weights = Matrix::Zero(3, 3);
  m.weights(0, 1) = m.weights(1, 0) = 0.8;
  m.weights(0, 2) = m.weights(2, 0) = -0.6;
  m.item_means = Vector::Zero(3);
  std::vector<std::pair<int, double>> hist{{1, 1.0}, {2, 1.0}};
  double abs_den = predict_iis(m, hist, 0, false);
  double lit_den = predict_iis(m, hist, 0, true);
  CHECK(abs_den == doctest::Approx((0.8 - 0.6) / 1.4));
  CHECK(lit_den == doctest::Approx((0.8 - 0.6) / 0.2));
}

TEST_CASE("fit_plsi with one class recovers the empirical click distribution") {
  Dataset d;
  d.family = Family::Bernoulli;
  d.n_users = 4;
  d.n_items = 3;
  d.covariates = Matrix::Ones(4, 1);
  for (int u = 0; u < 4; ++u) d.user_ids.push_back("u" + std::to_string(u));
  d.item_ids = {"a", "b", "c"};
  // clicks: a x3, b x2, c x1
  d.observations = {{0, 0, 1.0, 0}, {1, 0, 1.0, 1}, {2, 0, 1.0, 2},
                    {0, 1, 1.0, 3}, {3, 1, 1.0, 4}, {3, 2, 1.0, 5},
                    {1, 2, 0.0, 6}};
  PlsiModel m = fit_plsi(d, 1);
  CHECK(m.p_item_given_class(0, 0) == doctest::Approx(3.0 / 6.0));
  CHECK(m.p_item_given_class(0, 1) == doctest::Approx(2.0 / 6.0));
  CHECK(m.p_item_given_class(0, 2) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("fit_plsi separates two disjoint blocks") {
  Dataset d;
  d.family = Family::Bernoulli;
  d.n_users = 20;
  d.n_items = 8;
  d.covariates = Matrix::Ones(20, 1);
  for (int u = 0; u < 20; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (int j = 0; j < 8; ++j) d.item_ids.push_back("i" + std::to_string(j));
  std::int64_t ts = 0;
  Rng rng(3);
  for (int u = 0; u < 20; ++u) {
    int base = u < 10 ? 0 : 4;
    for (int r = 0; r < 6; ++r)
      d.observations.push_back({u, base + rng.uniform_int(4), 1.0, ts++});
  }
  PlsiModel m = fit_plsi(d, 2, 1e-9, 500, 5);
  // each class concentrates on one block
  double c0_block0 = m.p_item_given_class.row(0).head(4).sum();
  double c1_block0 = m.p_item_given_class.row(1).head(4).sum();
  double hi = std::max(c0_block0, c1_block0), lo = std::min(c0_block0, c1_block0);
  CHECK(hi >= 1.0 - 1e-3);
  CHECK(lo <= 1e-3);
}

TEST_CASE("fit_plsi keeps probability simplexes and a monotone log-likelihood") {
  auto [data, truth] = synth_generate(30, 6, 1, 0.3, Family::Bernoulli, 77, {10});
  double prev = -std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 6; ++iters) {
    PlsiModel m = fit_plsi(data, 3, 0.0, iters, 7);
    for (int l = 0; l < 3; ++l)
      CHECK(m.p_item_given_class.row(l).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (int u = 0; u < data.n_users; ++u)
      CHECK(m.p_class_given_user.row(u).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(m.p_item_given_class.minCoeff() >= 0.0);
    CHECK(m.log_likelihood >= prev - 1e-9);
    prev = m.log_likelihood;
  }
}

TEST_CASE("fit_plsi rejects k_latent < 1 and is deterministic") {
  auto [data, truth] = synth_generate(10, 4, 1, 0.2, Family::Bernoulli, 79, {6});
  CHECK_THROWS_AS(fit_plsi(data, 0), std::invalid_argument);
  PlsiModel a = fit_plsi(data, 2, 1e-8, 50, 11);
  PlsiModel b = fit_plsi(data, 2, 1e-8, 50, 11);
  CHECK((a.p_item_given_class - b.p_item_given_class).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bire_factor_conditional matches the dense formula at K = 3") {
  Rng rng(83);
  int m_items = 5, k = 3;
  Matrix v(m_items, k);
  Vector r(m_items);
  for (int i = 0; i < m_items; ++i) {
    r[i] = rng.normal();
    for (int f = 0; f < k; ++f) v(i, f) = rng.normal();
  }
  double sigma2 = 0.7;
  auto [mean, var] = bire_factor_conditional(v, r, sigma2);
  Matrix expect_var = (Matrix::Identity(k, k) + v.transpose() * v / sigma2).inverse();
  Vector expect_mean = expect_var * v.transpose() * r / sigma2;
  CHECK((var - expect_var).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((mean - expect_mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_bire recovers a noiseless rank-one structure") {
  Rng rng(89);
  const int n_users = 30, n_items = 12;
  Vector qu(n_users), vj(n_items);
  for (int u = 0; u < n_users; ++u) qu[u] = rng.normal();
  for (int j = 0; j < n_items; ++j) vj[j] = 0.5 + rng.uniform();
  Dataset d;
  d.family = Family::Gaussian;
  d.n_users = n_users;
  d.n_items = n_items;
  d.covariates = Matrix::Ones(n_users, 1);
  for (int u = 0; u < n_users; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (int j = 0; j < n_items; ++j) d.item_ids.push_back("i" + std::to_string(j));
  std::vector<std::pair<int, int>> held_out;
  std::int64_t ts = 0;
  for (int u = 0; u < n_users; ++u)
    for (int j = 0; j < n_items; ++j) {
      if ((u + j) % 7 == 0) {
        held_out.emplace_back(u, j);
        continue;
      }
      d.observations.push_back({u, j, qu[u] * vj[j], ts++});
    }
  BireOptions opts;
  opts.n_samples = 60;
  opts.n_em_iter = 25;
  BireModel m = fit_bire(d, 1, 4, opts);
  double se = 0.0;
  for (const auto& [u, j] : held_out) {
    double pred = predict_bire(m, u, j);
    se += (pred - qu[u] * vj[j]) * (pred - qu[u] * vj[j]);
  }
  CHECK(std::sqrt(se / double(held_out.size())) <= 0.05);
}

TEST_CASE("fit_bire rejects degenerate factor counts") {
  auto [data, truth] = synth_generate(6, 5, 1, 0.2, Family::Gaussian, 91, {4});
  CHECK_THROWS_AS(fit_bire(data, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(fit_bire(data, 0, 1), std::invalid_argument);
}

TEST_CASE("fit_bire is deterministic given the seed and thread count independent") {
  auto [data, truth] = synth_generate(15, 6, 1, 0.2, Family::Gaussian, 93, {8});
  BireOptions o1;
  o1.n_samples = 10;
  o1.n_em_iter = 3;
  o1.n_threads = 1;
  BireOptions o2 = o1;
  o2.n_threads = 2;
  BireModel a = fit_bire(data, 2, 17, o1);
  BireModel b = fit_bire(data, 2, 17, o2);
  CHECK((a.q - b.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.v - b.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.var_noise == b.var_noise);
}

TEST_CASE("predict_bire composes the stored effects with zero fallbacks") {
  BireModel m;
  m.mu = 3.0;
  m.alpha = Vector::Constant(2, 0.5);
  m.b_item = Vector::Constant(2, -0.25);
  m.q = Matrix::Ones(2, 2);
  m.v = Matrix::Ones(2, 2) * 0.1;
  m.k_factors = 2;
  CHECK(predict_bire(m, 9, 9) == doctest::Approx(3.0));
  CHECK(predict_bire(m, 0, 9) == doctest::Approx(3.5));
  CHECK(predict_bire(m, 0, 1) == doctest::Approx(3.0 + 0.5 - 0.25 + 0.2));
  m.q.setZero();
  CHECK(predict_bire(m, 0, 1) == doctest::Approx(3.25));  // reduces to the MP form
}

TEST_CASE("bire posterior mean prediction tracks per-sample averages") {
  auto [data, truth] = synth_generate(20, 8, 1, 0.2, Family::Gaussian, 95, {12, 0.5});
  BireOptions opts;
  opts.n_samples = 200;
  opts.n_em_iter = 4;
  BireModel m = fit_bire(data, 2, 29, opts);
  // with many kept samples the factor-product bias tr(Cov(q,v)) is small
  // relative to the response scale; spot-check a few cells for sanity
  for (int u = 0; u < 3; ++u)
    for (int j = 0; j < 3; ++j) {
      double pred = predict_bire(m, u, j);
      CHECK(std::isfinite(pred));
      CHECK(std::abs(pred) < 20.0);
    }
}
