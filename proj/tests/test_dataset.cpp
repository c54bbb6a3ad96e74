#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include "upg/dataset.hpp"

using namespace upg;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/upg_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& content) {
    std::ofstream out(path);
    out << content;
  }
};

}  // namespace

TEST_CASE("parse_movielens single line") {
  TempFile f("ml_single.dat");
  f.write("1::10::5::978300760\n");
  Dataset d = parse_movielens(f.path);
  CHECK(d.family == Family::Gaussian);
  CHECK(d.n_users == 1);
  CHECK(d.n_items == 1);
  CHECK(d.covariate_dim == 1);
  CHECK(d.covariates(0, 0) == 1.0);
  REQUIRE(d.n_obs() == 1);
  CHECK(d.observations[0].response == 5.0);
  CHECK(d.observations[0].timestamp == 978300760);
  CHECK(d.user_ids[0] == "1");
  CHECK(d.item_ids[0] == "10");
}

TEST_CASE("parse_movielens reports malformed lines with their number") {
  TempFile f("ml_bad.dat");
  f.write("1::10::x::5\n");
  CHECK_THROWS_WITH_AS(parse_movielens(f.path), doctest::Contains(":1:"), std::runtime_error);

  TempFile g("ml_bad2.dat");
  g.write("1::10::5::978300760\n2::3::4\n");
  CHECK_THROWS_WITH_AS(parse_movielens(g.path), doctest::Contains(":2:"), std::runtime_error);
}

TEST_CASE("parse_movielens rejects an empty file") {
  TempFile f("ml_empty.dat");
  f.write("");
  CHECK_THROWS_AS(parse_movielens(f.path), std::runtime_error);
}

TEST_CASE("parse_event_log two users, one covariate") {
  TempFile f("ev_two.tsv");
  f.write("user_id\titem_id\tresponse\ttimestamp\tc1\n"
          "u1\ta\t1\t100\t0.5\n"
          "u2\tb\t0\t200\t-1\n");
  Dataset d = parse_event_log(f.path);
  CHECK(d.family == Family::Bernoulli);
  CHECK(d.n_users == 2);
  CHECK(d.n_items == 2);
  CHECK(d.covariate_dim == 2);
  CHECK(d.covariates(0, 0) == 1.0);
  CHECK(d.covariates(0, 1) == 0.5);
  CHECK(d.covariates(1, 1) == -1.0);
}

TEST_CASE("parse_event_log rejects inconsistent covariates naming the user") {
  TempFile f("ev_inconsistent.tsv");
  f.write("user_id\titem_id\tresponse\ttimestamp\tc1\n"
          "u1\ta\t1\t100\t0.5\n"
          "u1\tb\t0\t200\t0.6\n");
  CHECK_THROWS_WITH_AS(parse_event_log(f.path), doctest::Contains("u1"), std::runtime_error);
}

TEST_CASE("parse_event_log rejects non-binary responses") {
  TempFile f("ev_badresp.tsv");
  f.write("user_id\titem_id\tresponse\ttimestamp\tc1\n"
          "u1\ta\t2\t100\t0.5\n");
  CHECK_THROWS_AS(parse_event_log(f.path), std::runtime_error);
}

TEST_CASE("synthetic event log round-trips bit-exactly") {
  auto [data, truth] = synth_generate(50, 8, 3, 0.2, Family::Bernoulli, 9, {20, 1.0, 0.5, 0.5});
  REQUIRE(data.n_obs() == 1000);
  TempFile f("ev_roundtrip.tsv");
  write_event_log(data, f.path);
  Dataset back = parse_event_log(f.path);
  CHECK(back.n_users == data.n_users);
  CHECK(back.n_items == data.n_items);
  CHECK(back.covariate_dim == data.covariate_dim);
  REQUIRE(back.n_obs() == data.n_obs());
  // dense indices follow first appearance in the file, so compare by id
  for (std::size_t i = 0; i < data.n_obs(); ++i) {
    CHECK(back.user_ids[std::size_t(back.observations[i].user)] ==
          data.user_ids[std::size_t(data.observations[i].user)]);
    CHECK(back.item_ids[std::size_t(back.observations[i].item)] ==
          data.item_ids[std::size_t(data.observations[i].item)]);
    CHECK(back.observations[i].response == data.observations[i].response);
    CHECK(back.observations[i].timestamp == data.observations[i].timestamp);
  }
  for (int u = 0; u < data.n_users; ++u) {
    int bu = back.user_index.at(data.user_ids[std::size_t(u)]);
    CHECK((back.covariates.row(bu) - data.covariates.row(u)).cwiseAbs().maxCoeff() == 0.0);
  }
  // serialize(parse(f)) reproduces the file
  TempFile f2("ev_roundtrip2.tsv");
  write_event_log(back, f2.path);
  std::ifstream a(f.path), b(f2.path);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("temporal_split basic quarters") {
  Dataset d;
  d.family = Family::Gaussian;
  d.n_users = 1;
  d.n_items = 4;
  d.covariates = Matrix::Ones(1, 1);
  d.user_ids = {"u"};
  d.item_ids = {"a", "b", "c", "d"};
  for (int t = 1; t <= 4; ++t) d.observations.push_back({0, t - 1, double(t), t});
  auto [train, test] = temporal_split(d, 0.75);
  REQUIRE(train.n_obs() == 3);
  REQUIRE(test.n_obs() == 1);
  CHECK(train.observations[2].timestamp == 3);
  CHECK(test.observations[0].timestamp == 4);
  CHECK(train.n_users == d.n_users);
  CHECK(test.n_items == d.n_items);
}

TEST_CASE("temporal_split keeps file order on equal timestamps") {
  Dataset d;
  d.family = Family::Gaussian;
  d.n_users = 1;
  d.n_items = 5;
  d.covariates = Matrix::Ones(1, 1);
  d.user_ids = {"u"};
  d.item_ids = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < 5; ++i) d.observations.push_back({0, i, double(i), 7});
  auto [train, test] = temporal_split(d, 0.6);
  REQUIRE(train.n_obs() == 3);
  CHECK(train.observations[0].item == 0);
  CHECK(train.observations[1].item == 1);
  CHECK(train.observations[2].item == 2);
  CHECK(test.observations[0].item == 3);
  CHECK(test.observations[1].item == 4);
}

TEST_CASE("temporal_split is a disjoint partition of the input") {
  auto [data, truth] = synth_generate(30, 6, 1, 0.3, Family::Gaussian, 4, {15});
  auto [train, test] = temporal_split(data, 0.7);
  CHECK(train.n_obs() + test.n_obs() == data.n_obs());
  // multiset equality via sorted triples
  auto key = [](const Observation& o) {
    return std::tuple(o.timestamp, o.user, o.item, o.response);
  };
  std::vector<std::tuple<std::int64_t, int, int, double>> all, both;
  for (const auto& o : data.observations) all.push_back(key(o));
  for (const auto& o : train.observations) both.push_back(key(o));
  for (const auto& o : test.observations) both.push_back(key(o));
  std::sort(all.begin(), all.end());
  std::sort(both.begin(), both.end());
  CHECK(all == both);
  // split point respects timestamps
  std::int64_t max_train = 0, min_test = 1 << 30;
  for (const auto& o : train.observations) max_train = std::max(max_train, o.timestamp);
  for (const auto& o : test.observations) min_test = std::min(min_test, o.timestamp);
  CHECK(max_train <= min_test);
}

TEST_CASE("temporal_split rejects empty data and bad fractions") {
  Dataset d;
  CHECK_THROWS_AS(temporal_split(d, 0.5), std::invalid_argument);
  auto [data, truth] = synth_generate(3, 3, 1, 0.0, Family::Gaussian, 1, {2});
  CHECK_THROWS_AS(temporal_split(data, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(temporal_split(data, 1.0), std::invalid_argument);
}

TEST_CASE("synth_generate is deterministic given the seed") {
  auto [d1, t1] = synth_generate(20, 10, 2, 0.2, Family::Gaussian, 77, {5});
  auto [d2, t2] = synth_generate(20, 10, 2, 0.2, Family::Gaussian, 77, {5});
  CHECK((t1.true_omega - t2.true_omega).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.true_beta - t2.true_beta).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(d1.n_obs() == d2.n_obs());
  for (std::size_t i = 0; i < d1.n_obs(); ++i) {
    CHECK(d1.observations[i].item == d2.observations[i].item);
    CHECK(d1.observations[i].response == d2.observations[i].response);
  }
}

TEST_CASE("synth_generate sparsity 0 gives a diagonal precision") {
  auto [data, truth] = synth_generate(5, 12, 1, 0.0, Family::Gaussian, 3, {2});
  Matrix off = truth.true_omega;
  off.diagonal().setZero();
  CHECK(off.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synth_generate truth is symmetric PD") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto [data, truth] = synth_generate(5, 15, 1, 0.4, Family::Gaussian, seed, {2});
    CHECK((truth.true_omega - truth.true_omega.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(truth.true_omega);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("synth_generate Gaussian noise variance matches the generator") {
  SynthOptions opts;
  opts.obs_per_user = 400;
  opts.var_noise = 2.25;
  auto [data, truth] = synth_generate(60, 3, 1, 0.3, Family::Gaussian, 21, opts);
  // recompute phi-free residuals using the generator's own truth is not
  // possible without phi, so check within (u, item) replicate groups: the
  // within-group variance estimates var_noise directly.
  std::map<std::pair<int, int>, std::vector<double>> groups;
  for (const auto& o : data.observations) groups[{o.user, o.item}].push_back(o.response);
  double pooled = 0.0;
  long dof = 0;
  for (const auto& [k, v] : groups) {
    if (v.size() < 2) continue;
    double mean = 0.0;
    for (double y : v) mean += y;
    mean /= double(v.size());
    for (double y : v) pooled += (y - mean) * (y - mean);
    dof += long(v.size()) - 1;
  }
  double est = pooled / double(dof);
  CHECK(est == doctest::Approx(opts.var_noise).epsilon(0.05));
}

TEST_CASE("sum of replicate counts equals total observation count") {
  auto [data, truth] = synth_generate(25, 7, 1, 0.2, Family::Bernoulli, 8, {12});
  std::map<std::pair<int, int>, int> n_uj;
  for (const auto& o : data.observations) n_uj[{o.user, o.item}]++;
  long total = 0;
  for (const auto& [k, n] : n_uj) total += n;
  CHECK(total == long(data.n_obs()));
}

TEST_CASE("subsample_top keeps the heaviest users and items") {
  auto [data, truth] = synth_generate(40, 12, 1, 0.2, Family::Gaussian, 5, {30});
  Dataset sub = subsample_top(data, 10, 6);
  CHECK(sub.n_users == 10);
  CHECK(sub.n_items == 6);
  CHECK(sub.n_obs() > 0);
  for (const auto& o : sub.observations) {
    CHECK(o.user < 10);
    CHECK(o.item < 6);
  }
  // id maps stay bijective
  for (int u = 0; u < sub.n_users; ++u) CHECK(sub.user_index.at(sub.user_ids[std::size_t(u)]) == u);
}
