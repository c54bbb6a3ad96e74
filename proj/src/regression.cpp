#include "upg/regression.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "upg/parallel.hpp"
#include "upg/rng.hpp"

namespace upg {

namespace {

constexpr double kProbClip = 1e-6;

double clip_prob(double p) { return std::min(1.0 - kProbClip, std::max(kProbClip, p)); }

// -log lik of a Bernoulli observation with linear predictor theta,
// log(1+exp(theta)) - y*theta evaluated stably.
double nll_term(double theta, double y) {
  double softplus = theta > 0 ? theta + std::log1p(std::exp(-theta)) : std::log1p(std::exp(theta));
  return softplus - y * theta;
}

// Newton with backtracking for one item's ridge logistic problem.
Vector fit_item_logistic(const Matrix& covariates, const std::vector<int>& users,
                         const std::vector<double>& responses,
                         const std::vector<double>& offsets, double c_penalty,
                         const IregOptions& opts, std::vector<double>* trace) {
  const int d = int(covariates.cols());
  Vector beta = Vector::Zero(d);
  if (users.empty()) return beta;

  auto objective = [&](const Vector& bb) {
    double obj = 0.5 * bb.squaredNorm();
    for (std::size_t i = 0; i < users.size(); ++i) {
      double theta = covariates.row(users[i]).dot(bb) + offsets[i];
      obj += c_penalty * nll_term(theta, responses[i]);
    }
    return obj;
  };

  double obj = objective(beta);
  if (trace) trace->push_back(obj);
  Vector grad(d), step(d);
  Matrix hess(d, d);
  for (int it = 0; it < opts.max_newton; ++it) {
    grad = beta;
    hess = Matrix::Identity(d, d);
    for (std::size_t i = 0; i < users.size(); ++i) {
      auto x = covariates.row(users[i]);
      double theta = x.dot(beta) + offsets[i];
      double p = clip_prob(sigmoid(theta));
      grad += c_penalty * (p - responses[i]) * x.transpose();
      hess += (c_penalty * p * (1.0 - p)) * (x.transpose() * x);
    }
    if (grad.cwiseAbs().maxCoeff() <= opts.grad_tol) break;
    step = hess.llt().solve(grad);
    double t = 1.0;
    double slope = grad.dot(step);
    double new_obj = objective(beta - t * step);
    int backtracks = 0;
    while (new_obj > obj - 1e-4 * t * slope && backtracks < 60) {
      t *= 0.5;
      new_obj = objective(beta - t * step);
      ++backtracks;
    }
    if (new_obj >= obj) break;  // no further progress possible at this scale
    beta -= t * step;
    obj = new_obj;
    if (trace) trace->push_back(obj);
  }
  return beta;
}

IregModel fit_ireg_impl(const Dataset& data, double c_penalty, const Vector* offsets,
                        const IregOptions& opts) {
  if (data.family != Family::Bernoulli)
    throw std::invalid_argument("fit_ireg: Bernoulli family required");
  if (!(c_penalty > 0.0) || !std::isfinite(c_penalty))
    throw std::invalid_argument("fit_ireg: c_penalty must be positive and finite");
  if (offsets && offsets->size() != long(data.n_obs()))
    throw std::invalid_argument("fit_ireg: offset length mismatch");

  IregModel model;
  model.c_penalty = c_penalty;
  model.beta = Matrix::Zero(data.n_items, data.covariate_dim);

  auto by_item = data.obs_by_item();
  parallel_for(std::size_t(data.n_items), opts.n_threads, [&](std::size_t begin, std::size_t end) {
    std::vector<int> users;
    std::vector<double> responses, offs;
    for (std::size_t j = begin; j < end; ++j) {
      users.clear();
      responses.clear();
      offs.clear();
      for (int oi : by_item[j]) {
        const Observation& obs = data.observations[std::size_t(oi)];
        users.push_back(obs.user);
        responses.push_back(obs.response);
        offs.push_back(offsets ? (*offsets)[oi] : 0.0);
      }
      std::vector<double>* trace =
          (opts.objective_trace && int(j) == opts.trace_item) ? opts.objective_trace : nullptr;
      model.beta.row(long(j)) =
          fit_item_logistic(data.covariates, users, responses, offs, c_penalty, opts, trace)
              .transpose();
    }
  });
  return model;
}

}  // namespace

IregModel fit_ireg(const Dataset& data, double c_penalty, const IregOptions& opts) {
  return fit_ireg_impl(data, c_penalty, nullptr, opts);
}

IregModel fit_ireg_offset(const Dataset& data, double c_penalty, const Vector& offsets,
                          const IregOptions& opts) {
  return fit_ireg_impl(data, c_penalty, &offsets, opts);
}

double predict_ireg(const IregModel& model, const Eigen::Ref<const Vector>& x, int item) {
  if (item < 0 || item >= model.beta.rows()) throw std::invalid_argument("predict_ireg: bad item");
  if (x.size() != model.beta.cols())
    throw std::invalid_argument("predict_ireg: covariate dimension mismatch");
  return sigmoid(model.beta.row(item).dot(x));
}

double select_c_penalty(const Dataset& data, const std::vector<double>& grid, int n_folds,
                        std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("select_c_penalty: empty grid");
  if (n_folds < 2) throw std::invalid_argument("select_c_penalty: need >= 2 folds");
  Rng rng(seed);
  std::vector<int> fold(data.n_obs());
  for (auto& f : fold) f = rng.uniform_int(n_folds);

  double best_c = grid.front();
  double best_ll = -std::numeric_limits<double>::infinity();
  for (double c : grid) {
    double ll = 0.0;
    for (int f = 0; f < n_folds; ++f) {
      Dataset train = data;
      train.observations.clear();
      std::vector<const Observation*> held;
      for (std::size_t i = 0; i < data.n_obs(); ++i) {
        if (fold[i] == f)
          held.push_back(&data.observations[i]);
        else
          train.observations.push_back(data.observations[i]);
      }
      if (train.observations.empty() || held.empty()) continue;
      IregModel m = fit_ireg(train, c);
      for (const Observation* obs : held) {
        double p = clip_prob(predict_ireg(m, data.covariates.row(obs->user).transpose(), obs->item));
        ll += obs->response * std::log(p) + (1.0 - obs->response) * std::log(1.0 - p);
      }
    }
    if (ll > best_ll) {
      best_ll = ll;
      best_c = c;
    }
  }
  return best_c;
}

double fit_constant(const Dataset& data) {
  if (data.observations.empty()) throw std::invalid_argument("fit_constant: empty dataset");
  double sum = 0.0;
  for (const auto& obs : data.observations) sum += obs.response;
  return sum / double(data.n_obs());
}

MpModel fit_mp(const Dataset& data, double tol, int max_iter) {
  if (data.family != Family::Gaussian)
    throw std::invalid_argument("fit_mp: Gaussian family required");
  if (data.observations.empty()) throw std::invalid_argument("fit_mp: empty dataset");

  const int n_users = data.n_users, n_items = data.n_items;
  const double n = double(data.n_obs());

  MpModel m;
  m.mu = fit_constant(data);
  m.alpha = Vector::Zero(n_users);
  m.b_item = Vector::Zero(n_items);
  double var_y = 0.0;
  for (const auto& obs : data.observations) var_y += (obs.response - m.mu) * (obs.response - m.mu);
  var_y = std::max(var_y / n, 1e-8);
  m.var_noise = var_y;
  m.var_alpha = m.var_b = std::max(0.1 * var_y, 1e-6);

  auto by_user = data.obs_by_user();
  auto by_item = data.obs_by_item();
  Vector v_alpha = Vector::Zero(n_users), v_b = Vector::Zero(n_items);

  m.converged = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    // E-step for user effects given current item-effect means.
    for (int u = 0; u < n_users; ++u) {
      const auto& rows = by_user[std::size_t(u)];
      if (rows.empty()) {
        m.alpha[u] = 0.0;
        v_alpha[u] = 0.0;
        continue;
      }
      double prec = double(rows.size()) / m.var_noise + 1.0 / m.var_alpha;
      double lin = 0.0;
      for (int oi : rows) {
        const auto& obs = data.observations[std::size_t(oi)];
        lin += (obs.response - m.mu - m.b_item[obs.item]) / m.var_noise;
      }
      v_alpha[u] = 1.0 / prec;
      m.alpha[u] = lin / prec;
    }
    // E-step for item effects given current user-effect means.
    for (int j = 0; j < n_items; ++j) {
      const auto& rows = by_item[std::size_t(j)];
      if (rows.empty()) {
        m.b_item[j] = 0.0;
        v_b[j] = 0.0;
        continue;
      }
      double prec = double(rows.size()) / m.var_noise + 1.0 / m.var_b;
      double lin = 0.0;
      for (int oi : rows) {
        const auto& obs = data.observations[std::size_t(oi)];
        lin += (obs.response - m.mu - m.alpha[obs.user]) / m.var_noise;
      }
      v_b[j] = 1.0 / prec;
      m.b_item[j] = lin / prec;
    }

    // M-step.
    double mu_new = 0.0;
    for (const auto& obs : data.observations)
      mu_new += obs.response - m.alpha[obs.user] - m.b_item[obs.item];
    mu_new /= n;

    double sa = 0.0;
    int na = 0;
    for (int u = 0; u < n_users; ++u)
      if (!by_user[std::size_t(u)].empty()) {
        sa += m.alpha[u] * m.alpha[u] + v_alpha[u];
        ++na;
      }
    double sb = 0.0;
    int nb = 0;
    for (int j = 0; j < n_items; ++j)
      if (!by_item[std::size_t(j)].empty()) {
        sb += m.b_item[j] * m.b_item[j] + v_b[j];
        ++nb;
      }
    double var_alpha_new = std::max(sa / std::max(na, 1), 1e-10);
    double var_b_new = std::max(sb / std::max(nb, 1), 1e-10);

    double se = 0.0;
    for (const auto& obs : data.observations) {
      double r = obs.response - mu_new - m.alpha[obs.user] - m.b_item[obs.item];
      se += r * r + v_alpha[obs.user] + v_b[obs.item];
    }
    double var_noise_new = std::max(se / n, 1e-10);

    double change = std::max({std::abs(mu_new - m.mu), std::abs(var_alpha_new - m.var_alpha),
                              std::abs(var_b_new - m.var_b), std::abs(var_noise_new - m.var_noise)});
    m.mu = mu_new;
    m.var_alpha = var_alpha_new;
    m.var_b = var_b_new;
    m.var_noise = var_noise_new;
    if (change <= tol) {
      m.converged = true;
      ++it;
      break;
    }
  }
  m.iterations = it;
  return m;
}

double predict_mp(const MpModel& model, int user, int item) {
  double a = (user >= 0 && user < model.alpha.size()) ? model.alpha[user] : 0.0;
  double b = (item >= 0 && item < model.b_item.size()) ? model.b_item[item] : 0.0;
  return model.mu + a + b;
}

}  // namespace upg
