#include "upg/baselines.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "upg/parallel.hpp"
#include "upg/rng.hpp"

namespace upg {

namespace {

// Replicates collapsed to one (item, mean response) entry per user.
std::vector<std::vector<std::pair<int, double>>> user_item_means(const Dataset& data) {
  std::vector<std::vector<std::pair<int, double>>> sums(static_cast<std::size_t>(data.n_users));
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(data.n_users));
  for (const auto& obs : data.observations) {
    auto& row = sums[std::size_t(obs.user)];
    auto& cnt = counts[std::size_t(obs.user)];
    auto it = std::find_if(row.begin(), row.end(),
                           [&](const auto& p) { return p.first == obs.item; });
    if (it == row.end()) {
      row.emplace_back(obs.item, obs.response);
      cnt.push_back(1);
    } else {
      it->second += obs.response;
      cnt[std::size_t(it - row.begin())] += 1;
    }
  }
  for (std::size_t u = 0; u < sums.size(); ++u) {
    for (std::size_t i = 0; i < sums[u].size(); ++i) sums[u][i].second /= double(counts[u][i]);
    std::sort(sums[u].begin(), sums[u].end());
  }
  return sums;
}

}  // namespace

IisModel fit_iis(const Dataset& data, IisVariant variant, int n_threads) {
  if (variant == IisVariant::Pearson && data.family != Family::Gaussian)
    throw std::invalid_argument("fit_iis: Pearson variant requires the Gaussian family");
  if (variant == IisVariant::Jaccard && data.family != Family::Bernoulli)
    throw std::invalid_argument("fit_iis: Jaccard variant requires the Bernoulli family");

  const int j_dim = data.n_items;
  IisModel model;
  model.variant = variant;
  model.weights = Matrix::Zero(j_dim, j_dim);

  double global_sum = 0.0;
  Vector item_sum = Vector::Zero(j_dim), item_count = Vector::Zero(j_dim);
  for (const auto& obs : data.observations) {
    item_sum[obs.item] += obs.response;
    item_count[obs.item] += 1.0;
    global_sum += obs.response;
  }
  double global_mean = data.observations.empty() ? 0.0 : global_sum / double(data.n_obs());
  model.item_means.resize(j_dim);
  for (int j = 0; j < j_dim; ++j)
    model.item_means[j] = item_count[j] > 0 ? item_sum[j] / item_count[j] : global_mean;

  auto per_user = user_item_means(data);

  if (variant == IisVariant::Pearson) {
    Matrix sxy = Matrix::Zero(j_dim, j_dim), sxx = Matrix::Zero(j_dim, j_dim),
           syy = Matrix::Zero(j_dim, j_dim), cnt = Matrix::Zero(j_dim, j_dim);
    for (const auto& row : per_user) {
      for (std::size_t a = 0; a < row.size(); ++a) {
        double da = row[a].second - model.item_means[row[a].first];
        for (std::size_t b = a + 1; b < row.size(); ++b) {
          double db = row[b].second - model.item_means[row[b].first];
          int i = row[a].first, j = row[b].first;
          sxy(i, j) += da * db;
          sxx(i, j) += da * da;
          syy(i, j) += db * db;
          cnt(i, j) += 1.0;
        }
      }
    }
    parallel_for(std::size_t(j_dim), n_threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i)
        for (int j = int(i) + 1; j < j_dim; ++j) {
          double w = 0.0;
          if (cnt(long(i), j) >= 2.0 && sxx(long(i), j) > 0.0 && syy(long(i), j) > 0.0)
            w = sxy(long(i), j) / std::sqrt(sxx(long(i), j) * syy(long(i), j));
          model.weights(long(i), j) = model.weights(j, long(i)) = w;
        }
    });
  } else {
    Matrix inter = Matrix::Zero(j_dim, j_dim);
    Vector clickers = Vector::Zero(j_dim);
    for (const auto& row : per_user) {
      std::vector<int> clicked;
      for (const auto& [item, mean] : row)
        if (mean > 0.0) clicked.push_back(item);
      for (int j : clicked) clickers[j] += 1.0;
      for (std::size_t a = 0; a < clicked.size(); ++a)
        for (std::size_t b = a + 1; b < clicked.size(); ++b)
          inter(clicked[a], clicked[b]) += 1.0;
    }
    parallel_for(std::size_t(j_dim), n_threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i)
        for (int j = int(i) + 1; j < j_dim; ++j) {
          double un = clickers[long(i)] + clickers[j] - inter(long(i), j);
          double w = un > 0.0 ? inter(long(i), j) / un : 0.0;
          model.weights(long(i), j) = model.weights(j, long(i)) = w;
        }
    });
  }
  return model;
}

double predict_iis(const IisModel& model, const std::vector<std::pair<int, double>>& history,
                   int item, bool literal_denominator) {
  if (item < 0 || item >= model.weights.rows())
    throw std::invalid_argument("predict_iis: bad item index");
  double num = 0.0, den = 0.0;
  for (const auto& [k, r] : history) {
    if (k == item || k < 0 || k >= model.weights.rows()) continue;
    double w = model.weights(item, k);
    if (w == 0.0) continue;
    num += w * (r - model.item_means[k]);
    den += literal_denominator ? w : std::abs(w);
  }
  if (den == 0.0) return model.item_means[item];
  return model.item_means[item] + num / den;
}

PlsiModel fit_plsi(const Dataset& data, int k_latent, double tol, int max_iter,
                   std::uint64_t seed) {
  if (k_latent < 1) throw std::invalid_argument("fit_plsi: k_latent must be >= 1");
  if (data.family != Family::Bernoulli)
    throw std::invalid_argument("fit_plsi: Bernoulli family required");

  const int j_dim = data.n_items, n_users = data.n_users, k_dim = k_latent;
  // Positive events only, aggregated to counts.
  std::vector<std::vector<std::pair<int, double>>> events(static_cast<std::size_t>(n_users));
  for (const auto& obs : data.observations) {
    if (obs.response <= 0.0) continue;
    auto& row = events[std::size_t(obs.user)];
    auto it = std::find_if(row.begin(), row.end(),
                           [&](const auto& p) { return p.first == obs.item; });
    if (it == row.end())
      row.emplace_back(obs.item, 1.0);
    else
      it->second += 1.0;
  }

  PlsiModel m;
  m.k_latent = k_dim;
  Rng rng(seed);
  m.p_item_given_class.resize(k_dim, j_dim);
  for (int l = 0; l < k_dim; ++l) {
    for (int j = 0; j < j_dim; ++j) m.p_item_given_class(l, j) = 0.5 + rng.uniform();
    m.p_item_given_class.row(l) /= m.p_item_given_class.row(l).sum();
  }
  m.p_class_given_user.resize(n_users, k_dim);
  for (int u = 0; u < n_users; ++u) {
    for (int l = 0; l < k_dim; ++l) m.p_class_given_user(u, l) = 0.5 + rng.uniform();
    m.p_class_given_user.row(u) /= m.p_class_given_user.row(u).sum();
  }

  double prev_ll = -std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iter; ++it) {
    Matrix n_class_item = Matrix::Zero(k_dim, j_dim);
    Matrix n_user_class = Matrix::Zero(n_users, k_dim);
    double ll = 0.0;
    Vector resp(k_dim);
    for (int u = 0; u < n_users; ++u) {
      for (const auto& [j, n_uj] : events[std::size_t(u)]) {
        for (int l = 0; l < k_dim; ++l)
          resp[l] = m.p_item_given_class(l, j) * m.p_class_given_user(u, l);
        double total = resp.sum();
        if (total <= 0.0) {
          resp.setConstant(1.0 / k_dim);
          total = 1.0;
          ll += n_uj * std::log(1e-300);
        } else {
          ll += n_uj * std::log(total);
        }
        resp /= total;
        n_class_item.col(j) += n_uj * resp;
        n_user_class.row(u) += n_uj * resp.transpose();
      }
    }
    for (int l = 0; l < k_dim; ++l) {
      double s = n_class_item.row(l).sum();
      if (s > 0.0)
        m.p_item_given_class.row(l) = n_class_item.row(l) / s;
      else
        m.p_item_given_class.row(l).setConstant(1.0 / j_dim);
    }
    for (int u = 0; u < n_users; ++u) {
      double s = n_user_class.row(u).sum();
      if (s > 0.0)
        m.p_class_given_user.row(u) = n_user_class.row(u) / s;
      else
        m.p_class_given_user.row(u).setConstant(1.0 / k_dim);
    }
    m.log_likelihood = ll;
    if (ll - prev_ll <= tol && it > 0) {
      ++it;
      break;
    }
    prev_ll = ll;
  }
  m.iterations = it;
  return m;
}

double predict_plsi(const PlsiModel& model, int user, int item) {
  if (item < 0 || item >= model.p_item_given_class.cols()) return 0.0;
  if (user >= 0 && user < model.p_class_given_user.rows())
    return model.p_class_given_user.row(user).dot(model.p_item_given_class.col(item));
  Vector avg = model.p_class_given_user.colwise().mean().transpose();
  return avg.dot(model.p_item_given_class.col(item));
}

std::pair<Vector, Matrix> bire_factor_conditional(const Matrix& v_rows, const Vector& residuals,
                                                  double sigma2, double prior_var) {
  const int k = int(v_rows.cols());
  Matrix prec = Matrix::Identity(k, k) / prior_var;
  prec.noalias() += v_rows.transpose() * v_rows / sigma2;
  Matrix var = prec.llt().solve(Matrix::Identity(k, k));
  Vector mean = var * (v_rows.transpose() * residuals) / sigma2;
  return {std::move(mean), std::move(var)};
}

BireModel fit_bire(const Dataset& data, int k_factors, std::uint64_t seed,
                   const BireOptions& opts) {
  if (data.family != Family::Gaussian)
    throw std::invalid_argument("fit_bire: Gaussian family required");
  if (k_factors < 1) throw std::invalid_argument("fit_bire: k_factors must be >= 1");
  if (k_factors >= std::min(data.n_users, data.n_items))
    throw std::invalid_argument("fit_bire: k_factors must be < min(n_users, n_items)");
  if (data.observations.empty()) throw std::invalid_argument("fit_bire: empty dataset");

  const int n_users = data.n_users, j_dim = data.n_items, k = k_factors;
  auto by_user = data.obs_by_user();
  auto by_item = data.obs_by_item();
  std::vector<int> obs_users, obs_items;
  for (int u = 0; u < n_users; ++u)
    if (!by_user[std::size_t(u)].empty()) obs_users.push_back(u);
  for (int j = 0; j < j_dim; ++j)
    if (!by_item[std::size_t(j)].empty()) obs_items.push_back(j);

  BireModel m;
  m.k_factors = k;
  m.alpha = Vector::Zero(n_users);
  m.b_item = Vector::Zero(j_dim);
  double mu = 0.0;
  for (const auto& obs : data.observations) mu += obs.response;
  mu /= double(data.n_obs());
  m.mu = mu;
  double var_y = 0.0;
  for (const auto& obs : data.observations) var_y += (obs.response - mu) * (obs.response - mu);
  var_y = std::max(var_y / double(data.n_obs()), 1e-8);
  m.var_noise = var_y;
  m.var_alpha = m.var_b = std::max(0.1 * var_y, 1e-6);
  m.a_prior = 1.0;

  Rng root(seed);
  Vector alpha = Vector::Zero(n_users), b = Vector::Zero(j_dim);
  Matrix q = Matrix::Zero(n_users, k), v = Matrix::Zero(j_dim, k);
  {
    Rng init = root.stream(0);
    for (int u : obs_users)
      for (int f = 0; f < k; ++f) q(u, f) = 0.1 * init.normal();
    for (int j : obs_items)
      for (int f = 0; f < k; ++f) v(j, f) = 0.1 * init.normal();
  }

  const int burn_in = opts.n_samples / 5;
  const int kept = std::max(opts.n_samples - burn_in, 1);

  Vector alpha_mean, b_mean;
  Matrix q_mean, v_mean;
  for (int em = 0; em < opts.n_em_iter; ++em) {
    alpha_mean = Vector::Zero(n_users);
    b_mean = Vector::Zero(j_dim);
    q_mean = Matrix::Zero(n_users, k);
    v_mean = Matrix::Zero(j_dim, k);
    double sum_alpha2 = 0.0, sum_b2 = 0.0, sum_v2 = 0.0, m1 = 0.0, m2 = 0.0;

    for (int sweep = 0; sweep < opts.n_samples; ++sweep) {
      // user main effects | rest
      parallel_for(obs_users.size(), opts.n_threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t ui = begin; ui < end; ++ui) {
          int u = obs_users[ui];
          Rng rng = root.stream(1 + std::uint64_t(em), 4 * std::uint64_t(sweep) + 0,
                                std::uint64_t(u));
          const auto& rows = by_user[std::size_t(u)];
          double prec = double(rows.size()) / m.var_noise + 1.0 / m.var_alpha;
          double lin = 0.0;
          for (int oi : rows) {
            const auto& obs = data.observations[std::size_t(oi)];
            lin += (obs.response - m.mu - b[obs.item] - q.row(u).dot(v.row(obs.item))) /
                   m.var_noise;
          }
          alpha[u] = lin / prec + rng.normal() / std::sqrt(prec);
        }
      });
      // item main effects | rest
      parallel_for(obs_items.size(), opts.n_threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t ji = begin; ji < end; ++ji) {
          int j = obs_items[ji];
          Rng rng = root.stream(1 + std::uint64_t(em), 4 * std::uint64_t(sweep) + 1,
                                std::uint64_t(j));
          const auto& rows = by_item[std::size_t(j)];
          double prec = double(rows.size()) / m.var_noise + 1.0 / m.var_b;
          double lin = 0.0;
          for (int oi : rows) {
            const auto& obs = data.observations[std::size_t(oi)];
            lin += (obs.response - m.mu - alpha[obs.user] - q.row(obs.user).dot(v.row(j))) /
                   m.var_noise;
          }
          b[j] = lin / prec + rng.normal() / std::sqrt(prec);
        }
      });
      // user factors | V, rest (independent across users)
      parallel_for(obs_users.size(), opts.n_threads, [&](std::size_t begin, std::size_t end) {
        Matrix prec(k, k);
        Vector lin(k), zvec(k);
        for (std::size_t ui = begin; ui < end; ++ui) {
          int u = obs_users[ui];
          Rng rng = root.stream(1 + std::uint64_t(em), 4 * std::uint64_t(sweep) + 2,
                                std::uint64_t(u));
          prec = Matrix::Identity(k, k);
          lin.setZero();
          for (int oi : by_user[std::size_t(u)]) {
            const auto& obs = data.observations[std::size_t(oi)];
            auto vj = v.row(obs.item);
            prec.noalias() += (vj.transpose() * vj) / m.var_noise;
            lin.noalias() +=
                vj.transpose() * ((obs.response - m.mu - alpha[u] - b[obs.item]) / m.var_noise);
          }
          Eigen::LLT<Matrix> llt(prec);
          for (int f = 0; f < k; ++f) zvec[f] = rng.normal();
          q.row(u) =
              (llt.solve(lin) + llt.matrixU().solve(zvec)).transpose();
        }
      });
      // item factors | Q, rest (independent across items)
      parallel_for(obs_items.size(), opts.n_threads, [&](std::size_t begin, std::size_t end) {
        Matrix prec(k, k);
        Vector lin(k), zvec(k);
        for (std::size_t ji = begin; ji < end; ++ji) {
          int j = obs_items[ji];
          Rng rng = root.stream(1 + std::uint64_t(em), 4 * std::uint64_t(sweep) + 3,
                                std::uint64_t(j));
          prec = Matrix::Identity(k, k) / m.a_prior;
          lin.setZero();
          for (int oi : by_item[std::size_t(j)]) {
            const auto& obs = data.observations[std::size_t(oi)];
            auto qu = q.row(obs.user);
            prec.noalias() += (qu.transpose() * qu) / m.var_noise;
            lin.noalias() +=
                qu.transpose() * ((obs.response - m.mu - alpha[obs.user] - b[j]) / m.var_noise);
          }
          Eigen::LLT<Matrix> llt(prec);
          for (int f = 0; f < k; ++f) zvec[f] = rng.normal();
          v.row(j) =
              (llt.solve(lin) + llt.matrixU().solve(zvec)).transpose();
        }
      });

      if (sweep < burn_in && opts.n_samples > 1) continue;
      alpha_mean += alpha;
      b_mean += b;
      q_mean += q;
      v_mean += v;
      for (int u : obs_users) sum_alpha2 += alpha[u] * alpha[u];
      for (int j : obs_items) {
        sum_b2 += b[j] * b[j];
        sum_v2 += v.row(j).squaredNorm();
      }
      for (const auto& obs : data.observations) {
        double r = obs.response - alpha[obs.user] - b[obs.item] - q.row(obs.user).dot(v.row(obs.item));
        m1 += r;
        m2 += r * r;
      }
    }

    double denom_obs = double(kept) * double(data.n_obs());
    double mu_new = m1 / denom_obs;
    m.var_noise = std::max(m2 / denom_obs - mu_new * mu_new, 1e-10);
    m.mu = mu_new;
    if (!obs_users.empty())
      m.var_alpha = std::max(sum_alpha2 / (double(kept) * double(obs_users.size())), 1e-10);
    if (!obs_items.empty()) {
      m.var_b = std::max(sum_b2 / (double(kept) * double(obs_items.size())), 1e-10);
      m.a_prior = std::max(sum_v2 / (double(kept) * double(obs_items.size()) * double(k)), 1e-10);
    }
  }

  m.alpha = alpha_mean / double(kept);
  m.b_item = b_mean / double(kept);
  m.q = q_mean / double(kept);
  m.v = v_mean / double(kept);
  return m;
}

double predict_bire(const BireModel& model, int user, int item) {
  double out = model.mu;
  if (user >= 0 && user < model.alpha.size()) out += model.alpha[user];
  if (item >= 0 && item < model.b_item.size()) out += model.b_item[item];
  if (user >= 0 && user < model.q.rows() && item >= 0 && item < model.v.rows())
    out += model.q.row(user).dot(model.v.row(item));
  return out;
}

}  // namespace upg
