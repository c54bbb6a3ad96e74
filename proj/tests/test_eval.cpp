#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "upg/eval.hpp"
#include "upg/rng.hpp"

using namespace upg;

TEST_CASE("rmse and mae basics") {
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(mae({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(rmse({0, 0}, {3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(mae({0}, {-2}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(rmse({1}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(mae({}, {}), std::invalid_argument);
}

TEST_CASE("rmse >= mae on random inputs") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a, b;
    int n = 1 + rng.uniform_int(30);
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.normal());
      b.push_back(rng.normal());
    }
    CHECK(rmse(a, b) >= mae(a, b) - 1e-12);
    CHECK(mae(a, b) >= 0.0);
  }
}

TEST_CASE("click_estimate counts concordant clicked records times J") {
  RandomizedLog log;
  log.n_items = 10;
  for (int i = 0; i < 20; ++i) log.records.push_back({i % 3, i % 10, i < 5 ? 1 : 0});
  // oracle policy that names the served item cannot be expressed (it sees the
  // user only), so check the boundary cases directly:
  Policy always0 = [](int, const Eigen::Ref<const Vector>&) { return 0; };
  // among the 5 clicked records, served items are 0..4, one of them is 0
  CHECK(click_estimate(log, always0) == doctest::Approx(10.0 * 1.0));

  RandomizedLog no_clicks = log;
  for (auto& r : no_clicks.records) r.clicked = 0;
  CHECK(click_estimate(no_clicks, always0) == 0.0);
}

TEST_CASE("click_estimate with a concordant policy scores J per click") {
  // users arranged so that user == served item on clicked records
  RandomizedLog log;
  log.n_items = 10;
  for (int i = 0; i < 5; ++i) log.records.push_back({i, i, 1});
  for (int i = 0; i < 7; ++i) log.records.push_back({i, (i + 3) % 10, 0});
  Policy identity = [](int user, const Eigen::Ref<const Vector>&) { return user; };
  CHECK(click_estimate(log, identity) == doctest::Approx(50.0));
}

TEST_CASE("click_estimate rejects out-of-range policy answers") {
  RandomizedLog log;
  log.n_items = 3;
  log.records.push_back({0, 1, 1});
  Policy bad = [](int, const Eigen::Ref<const Vector>&) { return 99; };
  CHECK_THROWS_AS(click_estimate(log, bad), std::runtime_error);
  RandomizedLog empty;
  empty.n_items = 3;
  Policy ok = [](int, const Eigen::Ref<const Vector>&) { return 0; };
  CHECK_THROWS_AS(click_estimate(empty, ok), std::invalid_argument);
}

TEST_CASE("click_estimate is invariant to monotone score transforms") {
  Rng rng(7);
  int n_users = 15, n_items = 6;
  Matrix scores(n_users, n_items);
  for (int u = 0; u < n_users; ++u)
    for (int j = 0; j < n_items; ++j) scores(u, j) = rng.normal();
  RandomizedLog log;
  log.n_items = n_items;
  for (int t = 0; t < 300; ++t)
    log.records.push_back({rng.uniform_int(n_users), rng.uniform_int(n_items),
                           rng.bernoulli(0.3) ? 1 : 0});
  Policy raw = argmax_policy(
      [&](int u, const Eigen::Ref<const Vector>&, int j) { return scores(u, j); }, n_items);
  Policy warped = argmax_policy(
      [&](int u, const Eigen::Ref<const Vector>&, int j) {
        return std::tanh(scores(u, j)) * 3.0 + 10.0;
      },
      n_items);
  CHECK(click_estimate(log, raw) == click_estimate(log, warped));
}

TEST_CASE("click_lift arithmetic and errors") {
  CHECK(click_lift(5.0, 5.0) == 0.0);
  CHECK(click_lift(9.0, 5.0) == doctest::Approx(80.0));
  CHECK(click_lift(0.0, 5.0) == doctest::Approx(-100.0));
  CHECK_THROWS_AS(click_lift(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("bootstrap_lift of identical policies is exactly zero") {
  Rng rng(11);
  RandomizedLog log;
  log.n_items = 4;
  for (int t = 0; t < 100; ++t)
    log.records.push_back({rng.uniform_int(5), rng.uniform_int(4), rng.bernoulli(0.5) ? 1 : 0});
  Policy p = [](int u, const Eigen::Ref<const Vector>&) { return u % 4; };
  LiftEstimate est = bootstrap_lift(log, p, p, 20, 3);
  CHECK(est.point == 0.0);
  CHECK(est.ci_low <= 0.0);
  CHECK(est.ci_high >= 0.0);
}

TEST_CASE("bootstrap_lift with one resample is a degenerate interval") {
  Rng rng(13);
  RandomizedLog log;
  log.n_items = 3;
  for (int t = 0; t < 200; ++t)
    log.records.push_back({rng.uniform_int(4), rng.uniform_int(3), 1});
  Policy a = [](int, const Eigen::Ref<const Vector>&) { return 0; };
  Policy b = [](int, const Eigen::Ref<const Vector>&) { return 1; };
  LiftEstimate est = bootstrap_lift(log, a, b, 1, 5);
  CHECK(est.ci_low == est.ci_high);
}

TEST_CASE("bootstrap_lift of a dominating policy sits above zero") {
  // policy a matches served items far more often among clicks
  RandomizedLog log;
  log.n_items = 5;
  Rng rng(17);
  for (int t = 0; t < 400; ++t) {
    int u = rng.uniform_int(10);
    int served = rng.uniform_int(5);
    int clicked = served == u % 5 ? 1 : (rng.bernoulli(0.05) ? 1 : 0);
    log.records.push_back({u, served, clicked});
  }
  Policy good = [](int u, const Eigen::Ref<const Vector>&) { return u % 5; };
  Policy bad = [](int u, const Eigen::Ref<const Vector>&) { return (u + 2) % 5; };
  LiftEstimate est = bootstrap_lift(log, good, bad, 30, 7);
  CHECK(est.point > 0.0);
  CHECK(est.ci_low > 0.0);
}

TEST_CASE("simulate_randomized_log degenerate probability tables") {
  Matrix zeros = Matrix::Zero(4, 6);
  RandomizedLog none = simulate_randomized_log(zeros, Vector(0), 500, 3);
  for (const auto& r : none.records) CHECK(r.clicked == 0);
  Matrix ones = Matrix::Ones(4, 6);
  RandomizedLog all = simulate_randomized_log(ones, Vector(0), 500, 3);
  CHECK(all.records.size() == 500);
  for (const auto& r : all.records) CHECK(r.clicked == 1);
}

TEST_CASE("simulate_randomized_log serves items uniformly") {
  const long t_visits = 100000;
  const int j_dim = 20;
  Matrix p = Matrix::Constant(8, j_dim, 0.1);
  RandomizedLog log = simulate_randomized_log(p, Vector(0), t_visits, 9);
  std::vector<long> counts(j_dim, 0);
  for (const auto& r : log.records) counts[std::size_t(r.served_item)]++;
  double expect = double(t_visits) / j_dim;
  double band = 4.0 * std::sqrt(expect);
  for (long c : counts) CHECK(std::abs(double(c) - expect) <= band);
}

TEST_CASE("simulate_randomized_log is deterministic given the seed") {
  Matrix p = Matrix::Constant(3, 4, 0.4);
  RandomizedLog a = simulate_randomized_log(p, Vector(0), 200, 21);
  RandomizedLog b = simulate_randomized_log(p, Vector(0), 200, 21);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].user == b.records[i].user);
    CHECK(a.records[i].served_item == b.records[i].served_item);
    CHECK(a.records[i].clicked == b.records[i].clicked);
  }
}

TEST_CASE("mean S(M) over replicate logs approaches V(M)") {
  // desk-scale version of the unbiasedness check
  Rng rng(23);
  const int n_users = 12, j_dim = 8;
  Matrix p(n_users, j_dim);
  for (int u = 0; u < n_users; ++u)
    for (int j = 0; j < j_dim; ++j) p(u, j) = 0.05 + 0.4 * rng.uniform();
  Policy greedy = argmax_policy(
      [&](int u, const Eigen::Ref<const Vector>&, int j) { return p(u, j); }, j_dim);
  const long t_visits = 10000;
  const int n_logs = 60;
  double v = expected_clicks(p, Vector(0), t_visits, greedy);
  std::vector<double> estimates;
  for (int r = 0; r < n_logs; ++r) {
    RandomizedLog log = simulate_randomized_log(p, Vector(0), t_visits, 1000 + std::uint64_t(r));
    estimates.push_back(click_estimate(log, greedy));
  }
  double mean = 0.0;
  for (double s : estimates) mean += s;
  mean /= double(n_logs);
  double sd = 0.0;
  for (double s : estimates) sd += (s - mean) * (s - mean);
  sd = std::sqrt(sd / double(n_logs - 1));
  double se = sd / std::sqrt(double(n_logs));
  CHECK(std::abs(mean - v) <= 3.0 * se);
}

TEST_CASE("randomized log TSV round-trips") {
  RandomizedLog log;
  log.n_items = 5;
  Rng rng(29);
  for (int t = 0; t < 50; ++t)
    log.records.push_back({rng.uniform_int(7), rng.uniform_int(5), rng.bernoulli(0.5) ? 1 : 0});
  std::string path = "/tmp/upg_test_log.tsv";
  write_randomized_log(log, path);
  RandomizedLog back = read_randomized_log(path);
  REQUIRE(back.records.size() == log.records.size());
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    CHECK(back.records[i].user == log.records[i].user);
    CHECK(back.records[i].served_item == log.records[i].served_item);
    CHECK(back.records[i].clicked == log.records[i].clicked);
  }
  std::remove(path.c_str());
}
