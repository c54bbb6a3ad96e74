#include "upg/dataset.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "upg/rng.hpp"

namespace upg {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

bool to_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

int intern(const std::string& id, std::unordered_map<std::string, int>& index,
           std::vector<std::string>& ids) {
  auto it = index.find(id);
  if (it != index.end()) return it->second;
  int idx = int(ids.size());
  index.emplace(id, idx);
  ids.push_back(id);
  return idx;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::vector<int>> Dataset::obs_by_user() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_users));
  for (int i = 0; i < int(observations.size()); ++i)
    out[std::size_t(observations[std::size_t(i)].user)].push_back(i);
  return out;
}

std::vector<std::vector<int>> Dataset::obs_by_item() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_items));
  for (int i = 0; i < int(observations.size()); ++i)
    out[std::size_t(observations[std::size_t(i)].item)].push_back(i);
  return out;
}

Dataset parse_movielens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Dataset data;
  data.family = Family::Gaussian;
  data.covariate_dim = 1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    // UserID::MovieID::Rating::Timestamp
    std::size_t p1 = line.find("::");
    std::size_t p2 = p1 == std::string::npos ? p1 : line.find("::", p1 + 2);
    std::size_t p3 = p2 == std::string::npos ? p2 : line.find("::", p2 + 2);
    if (p3 == std::string::npos) parse_fail(path, line_no, "expected UserID::MovieID::Rating::Timestamp");
    std::string user_id = line.substr(0, p1);
    std::string item_id = line.substr(p1 + 2, p2 - p1 - 2);
    std::string rating_s = line.substr(p2 + 2, p3 - p2 - 2);
    std::string ts_s = line.substr(p3 + 2);
    if (user_id.empty() || item_id.empty()) parse_fail(path, line_no, "empty id field");
    Observation obs;
    if (!to_double(rating_s, obs.response)) parse_fail(path, line_no, "bad rating '" + rating_s + "'");
    if (!to_int64(ts_s, obs.timestamp)) parse_fail(path, line_no, "bad timestamp '" + ts_s + "'");
    obs.user = intern(user_id, data.user_index, data.user_ids);
    obs.item = intern(item_id, data.item_index, data.item_ids);
    data.observations.push_back(obs);
  }
  if (data.observations.empty()) throw std::runtime_error(path + ": empty dataset");
  data.n_users = int(data.user_ids.size());
  data.n_items = int(data.item_ids.size());
  data.covariates = Matrix::Ones(data.n_users, 1);
  return data;
}

void write_movielens(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& obs : data.observations)
    out << data.user_ids[std::size_t(obs.user)] << "::" << data.item_ids[std::size_t(obs.item)]
        << "::" << fmt17(obs.response) << "::" << obs.timestamp << "\n";
  if (!out) throw std::runtime_error("short write to " + path);
}

Dataset parse_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty dataset");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line, '\t');
  if (header.size() < 4 || header[0] != "user_id" || header[1] != "item_id" ||
      header[2] != "response" || header[3] != "timestamp")
    parse_fail(path, 1, "bad header, expected user_id\titem_id\tresponse\ttimestamp\tc1...");
  int n_cov = int(header.size()) - 4;

  Dataset data;
  data.family = Family::Bernoulli;
  data.covariate_dim = 1 + n_cov;
  std::vector<Vector> covs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (int(fields.size()) != 4 + n_cov)
      parse_fail(path, line_no, "expected " + std::to_string(4 + n_cov) + " fields, got " +
                                    std::to_string(fields.size()));
    Observation obs;
    if (!to_double(fields[2], obs.response)) parse_fail(path, line_no, "bad response");
    if (obs.response != 0.0 && obs.response != 1.0)
      parse_fail(path, line_no, "response must be 0 or 1 for the event-log format");
    if (!to_int64(fields[3], obs.timestamp)) parse_fail(path, line_no, "bad timestamp");

    Vector x(1 + n_cov);
    x[0] = 1.0;
    for (int c = 0; c < n_cov; ++c) {
      double v;
      if (!to_double(fields[std::size_t(4 + c)], v)) parse_fail(path, line_no, "bad covariate");
      x[1 + c] = v;
    }
    int u = intern(fields[0], data.user_index, data.user_ids);
    if (u == int(covs.size())) {
      covs.push_back(x);
    } else if ((covs[std::size_t(u)] - x).cwiseAbs().maxCoeff() != 0.0) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": inconsistent covariates for user '" + fields[0] + "'");
    }
    obs.user = u;
    obs.item = intern(fields[1], data.item_index, data.item_ids);
    data.observations.push_back(obs);
  }
  if (data.observations.empty()) throw std::runtime_error(path + ": empty dataset");
  data.n_users = int(data.user_ids.size());
  data.n_items = int(data.item_ids.size());
  data.covariates.resize(data.n_users, data.covariate_dim);
  for (int u = 0; u < data.n_users; ++u) data.covariates.row(u) = covs[std::size_t(u)];
  return data;
}

void write_event_log(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "user_id\titem_id\tresponse\ttimestamp";
  for (int c = 1; c < data.covariate_dim; ++c) out << "\tc" << c;
  out << "\n";
  for (const auto& obs : data.observations) {
    out << data.user_ids[std::size_t(obs.user)] << '\t' << data.item_ids[std::size_t(obs.item)]
        << '\t' << fmt17(obs.response) << '\t' << obs.timestamp;
    for (int c = 1; c < data.covariate_dim; ++c)
      out << '\t' << fmt17(data.covariates(obs.user, c));
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

std::pair<Dataset, Dataset> temporal_split(const Dataset& data, double train_fraction) {
  if (data.observations.empty()) throw std::invalid_argument("temporal_split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("temporal_split: train_fraction must be in (0,1)");
  std::vector<int> order(data.observations.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return data.observations[std::size_t(a)].timestamp < data.observations[std::size_t(b)].timestamp;
  });
  std::size_t n_train = std::size_t(train_fraction * double(order.size()));
  Dataset train = data, test = data;
  train.observations.clear();
  test.observations.clear();
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? train : test).observations.push_back(data.observations[std::size_t(order[i])]);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, SynthTruth> synth_generate(int n_users, int n_items, int covariate_dim,
                                              double sparsity, Family family,
                                              std::uint64_t seed, const SynthOptions& opts) {
  if (!(sparsity >= 0.0 && sparsity < 1.0))
    throw std::invalid_argument("synth_generate: sparsity must be in [0,1)");
  if (n_users < 1 || n_items < 1 || covariate_dim < 1)
    throw std::invalid_argument("synth_generate: bad dimensions");

  Rng root(seed);
  SynthTruth truth;
  truth.family = family;
  truth.var_noise = opts.var_noise;
  truth.seed = seed;

  // Sparse random factor A, raw precision A A' + delta I, then restricted to
  // the sampled support and rescaled to strict diagonal dominance so the
  // result is PD with exactly the requested nonzero pattern.
  const int j_dim = n_items;
  Rng omega_rng = root.stream(1);
  Matrix a = Matrix::Zero(j_dim, j_dim);
  double a_density = std::max(0.2, sparsity);
  for (int i = 0; i < j_dim; ++i)
    for (int j = 0; j < j_dim; ++j)
      if (omega_rng.bernoulli(a_density)) a(i, j) = omega_rng.normal();
  Matrix raw = a * a.transpose() / double(j_dim);
  raw.diagonal().array() += opts.delta;

  Rng mask_rng = root.stream(2);
  Matrix omega = Matrix::Zero(j_dim, j_dim);
  omega.diagonal() = raw.diagonal();
  for (int i = 0; i < j_dim; ++i)
    for (int j = i + 1; j < j_dim; ++j)
      if (mask_rng.bernoulli(sparsity)) {
        double v = raw(i, j);
        if (std::abs(v) < 1e-3) {
          double sign = mask_rng.bernoulli(0.5) ? 1.0 : -1.0;
          v = sign * (0.1 + 0.4 * mask_rng.uniform());
        }
        omega(i, j) = omega(j, i) = v;
      }
  double scale = 1.0;
  for (int i = 0; i < j_dim; ++i) {
    double off = omega.row(i).cwiseAbs().sum() - std::abs(omega(i, i));
    if (off > 0.0) scale = std::min(scale, 0.95 * omega(i, i) / off);
  }
  for (int i = 0; i < j_dim; ++i)
    for (int j = 0; j < j_dim; ++j)
      if (i != j) omega(i, j) *= scale;
  truth.true_omega = omega;

  Rng beta_rng = root.stream(3);
  truth.true_beta.resize(j_dim, covariate_dim);
  for (int j = 0; j < j_dim; ++j)
    for (int c = 0; c < covariate_dim; ++c)
      truth.true_beta(j, c) = opts.beta_scale * beta_rng.normal();

  Dataset data;
  data.family = family;
  data.n_users = n_users;
  data.n_items = n_items;
  data.covariate_dim = covariate_dim;
  data.covariates.resize(n_users, covariate_dim);
  Rng cov_rng = root.stream(4);
  for (int u = 0; u < n_users; ++u) {
    data.covariates(u, 0) = 1.0;
    for (int c = 1; c < covariate_dim; ++c) data.covariates(u, c) = cov_rng.normal();
  }
  data.user_ids.reserve(std::size_t(n_users));
  for (int u = 0; u < n_users; ++u) {
    data.user_ids.push_back("u" + std::to_string(u));
    data.user_index.emplace(data.user_ids.back(), u);
  }
  data.item_ids.reserve(std::size_t(n_items));
  for (int j = 0; j < n_items; ++j) {
    data.item_ids.push_back("i" + std::to_string(j));
    data.item_index.emplace(data.item_ids.back(), j);
  }

  // phi_u ~ MVN(0, Omega^{-1}) via Omega = L L', phi = L'^{-1} z.
  Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("synth_generate: precision not PD (internal)");
  Rng phi_rng = root.stream(5);
  Matrix phi(n_users, j_dim);
  Vector z(j_dim);
  for (int u = 0; u < n_users; ++u) {
    for (int j = 0; j < j_dim; ++j) z[j] = phi_rng.normal();
    phi.row(u) = llt.matrixU().solve(z).transpose();
  }

  Rng y_rng = root.stream(6);
  double noise_sd = std::sqrt(opts.var_noise);
  std::int64_t ts = 0;
  data.observations.reserve(std::size_t(n_users) * std::size_t(opts.obs_per_user));
  for (int t = 0; t < opts.obs_per_user; ++t) {
    for (int u = 0; u < n_users; ++u) {
      Observation obs;
      obs.user = u;
      obs.item = y_rng.uniform_int(n_items);
      double eta = data.covariates.row(u).dot(truth.true_beta.row(obs.item)) + phi(u, obs.item);
      if (family == Family::Gaussian) {
        obs.response = eta + noise_sd * y_rng.normal();
      } else {
        obs.response = y_rng.bernoulli(sigmoid(eta)) ? 1.0 : 0.0;
      }
      obs.timestamp = ts++;
      data.observations.push_back(obs);
    }
  }
  return {std::move(data), std::move(truth)};
}

Dataset reindex_like(const Dataset& reference, const Dataset& data) {
  if (reference.covariate_dim != data.covariate_dim)
    throw std::invalid_argument("reindex_like: covariate dimension mismatch");
  Dataset out;
  out.family = data.family;
  out.covariate_dim = data.covariate_dim;
  out.user_ids = reference.user_ids;
  out.user_index = reference.user_index;
  out.item_ids = reference.item_ids;
  out.item_index = reference.item_index;

  std::vector<int> user_map(static_cast<std::size_t>(data.n_users));
  for (int u = 0; u < data.n_users; ++u)
    user_map[std::size_t(u)] = intern(data.user_ids[std::size_t(u)], out.user_index, out.user_ids);
  std::vector<int> item_map(static_cast<std::size_t>(data.n_items));
  for (int j = 0; j < data.n_items; ++j)
    item_map[std::size_t(j)] = intern(data.item_ids[std::size_t(j)], out.item_index, out.item_ids);

  out.n_users = int(out.user_ids.size());
  out.n_items = int(out.item_ids.size());
  out.covariates = Matrix::Zero(out.n_users, out.covariate_dim);
  out.covariates.col(0).setOnes();
  out.covariates.topRows(reference.n_users) = reference.covariates;
  for (int u = 0; u < data.n_users; ++u)
    out.covariates.row(user_map[std::size_t(u)]) = data.covariates.row(u);

  out.observations.reserve(data.observations.size());
  for (const auto& obs : data.observations) {
    Observation o = obs;
    o.user = user_map[std::size_t(obs.user)];
    o.item = item_map[std::size_t(obs.item)];
    out.observations.push_back(o);
  }
  return out;
}

Dataset subsample_top(const Dataset& data, int n_top_users, int n_top_items) {
  std::vector<std::pair<int, int>> user_counts(std::size_t(data.n_users));
  std::vector<std::pair<int, int>> item_counts(std::size_t(data.n_items));
  for (int u = 0; u < data.n_users; ++u) user_counts[std::size_t(u)] = {0, u};
  for (int j = 0; j < data.n_items; ++j) item_counts[std::size_t(j)] = {0, j};
  for (const auto& obs : data.observations) {
    user_counts[std::size_t(obs.user)].first++;
    item_counts[std::size_t(obs.item)].first++;
  }
  auto by_count = [](const std::pair<int, int>& a, const std::pair<int, int>& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  };
  std::sort(user_counts.begin(), user_counts.end(), by_count);
  std::sort(item_counts.begin(), item_counts.end(), by_count);

  std::vector<int> user_map(std::size_t(data.n_users), -1);
  std::vector<int> item_map(std::size_t(data.n_items), -1);
  int nu = std::min(n_top_users, data.n_users);
  int nj = std::min(n_top_items, data.n_items);
  std::vector<int> kept_users, kept_items;
  for (int r = 0; r < nu; ++r) kept_users.push_back(user_counts[std::size_t(r)].second);
  for (int r = 0; r < nj; ++r) kept_items.push_back(item_counts[std::size_t(r)].second);
  std::sort(kept_users.begin(), kept_users.end());
  std::sort(kept_items.begin(), kept_items.end());

  Dataset out;
  out.family = data.family;
  out.n_users = nu;
  out.n_items = nj;
  out.covariate_dim = data.covariate_dim;
  out.covariates.resize(nu, data.covariate_dim);
  for (int r = 0; r < nu; ++r) {
    int u = kept_users[std::size_t(r)];
    user_map[std::size_t(u)] = r;
    out.covariates.row(r) = data.covariates.row(u);
    out.user_ids.push_back(data.user_ids[std::size_t(u)]);
    out.user_index.emplace(out.user_ids.back(), r);
  }
  for (int r = 0; r < nj; ++r) {
    int j = kept_items[std::size_t(r)];
    item_map[std::size_t(j)] = r;
    out.item_ids.push_back(data.item_ids[std::size_t(j)]);
    out.item_index.emplace(out.item_ids.back(), r);
  }
  for (const auto& obs : data.observations) {
    int u = user_map[std::size_t(obs.user)];
    int j = item_map[std::size_t(obs.item)];
    if (u < 0 || j < 0) continue;
    Observation o = obs;
    o.user = u;
    o.item = j;
    out.observations.push_back(o);
  }
  return out;
}

}  // namespace upg
