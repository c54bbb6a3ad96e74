#include "upg/upg_model.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "upg/parallel.hpp"

namespace upg {

namespace {

constexpr double kProbClip = 1e-6;

double clip_prob(double p) { return std::min(1.0 - kProbClip, std::max(kProbClip, p)); }

double max_abs_diff(const SparseMatrix& a, const SparseMatrix& b) {
  SparseMatrix diff = a - b;
  double m = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

// Recompute e = z - x'beta with z and v held fixed (the PQL inner loop).
void refresh_e(WorkingResidualSet& res, const Dataset& data, const Matrix& beta) {
  for (std::size_t i = 0; i < data.n_obs(); ++i) {
    const Observation& obs = data.observations[i];
    res.e[long(i)] = res.z[long(i)] - data.covariates.row(obs.user).dot(beta.row(obs.item));
  }
}

std::vector<UserCounters> build_counters(const Dataset& data, const WorkingResidualSet& res) {
  std::vector<UserCounters> counters(static_cast<std::size_t>(data.n_users));
  struct Cell {
    int item;
    double k, u;
  };
  std::vector<std::vector<Cell>> cells(static_cast<std::size_t>(data.n_users));
  for (std::size_t i = 0; i < data.n_obs(); ++i) {
    const Observation& obs = data.observations[i];
    double inv_v = 1.0 / res.v[long(i)];
    cells[std::size_t(obs.user)].push_back({obs.item, inv_v, res.e[long(i)] * inv_v});
  }
  for (int u = 0; u < data.n_users; ++u) {
    auto& cs = cells[std::size_t(u)];
    if (cs.empty()) continue;
    std::sort(cs.begin(), cs.end(), [](const Cell& a, const Cell& b) { return a.item < b.item; });
    UserCounters& c = counters[std::size_t(u)];
    for (const Cell& cell : cs) {
      if (!c.active_items.empty() && c.active_items.back() == cell.item) {
        c.k_values.back() += cell.k;
        c.u_values.back() += cell.u;
      } else {
        c.active_items.push_back(cell.item);
        c.k_values.push_back(cell.k);
        c.u_values.push_back(cell.u);
      }
    }
  }
  return counters;
}

// Per-item weighted ridge least squares with offsets,
//   (I/C + sum x x'/v) beta = sum x (z - offset)/v.
// c_penalty = +inf drops the ridge term (a tiny jitter keeps the normal
// equations factorizable when an item has fewer observations than d).
Matrix gaussian_beta_update(const Dataset& data, const Vector& z, const Vector& v,
                            const std::vector<UserPosterior>* posteriors, double c_penalty,
                            int n_threads) {
  const int d = data.covariate_dim;
  Matrix beta = Matrix::Zero(data.n_items, d);
  auto by_item = data.obs_by_item();
  double ridge = std::isfinite(c_penalty) ? 1.0 / c_penalty : 1e-10;

  // Items with no observations get the global weighted mean as intercept so
  // predictions for them fall back to the overall response level.
  double fallback_num = 0.0, fallback_den = 0.0;
  for (std::size_t i = 0; i < data.n_obs(); ++i) {
    const Observation& obs = data.observations[i];
    double offset = posteriors ? (*posteriors)[std::size_t(obs.user)].mean_at(obs.item) : 0.0;
    fallback_num += (z[long(i)] - offset) / v[long(i)];
    fallback_den += 1.0 / v[long(i)];
  }
  double fallback = fallback_den > 0.0 ? fallback_num / fallback_den : 0.0;
  beta.col(0).setConstant(fallback);

  parallel_for(std::size_t(data.n_items), n_threads, [&](std::size_t begin, std::size_t end) {
    Matrix a(d, d);
    Vector rhs(d);
    for (std::size_t j = begin; j < end; ++j) {
      const auto& rows = by_item[j];
      if (rows.empty()) continue;
      a = ridge * Matrix::Identity(d, d);
      rhs.setZero();
      for (int oi : rows) {
        const Observation& obs = data.observations[std::size_t(oi)];
        auto x = data.covariates.row(obs.user);
        double offset =
            posteriors ? (*posteriors)[std::size_t(obs.user)].mean_at(obs.item) : 0.0;
        double w = 1.0 / v[oi];
        a.noalias() += w * (x.transpose() * x);
        rhs.noalias() += w * (z[oi] - offset) * x.transpose();
      }
      beta.row(long(j)) = a.ldlt().solve(rhs).transpose();
    }
  });
  return beta;
}

}  // namespace

WorkingResidualSet working_residuals(const UpgModel& model, const Dataset& data) {
  const std::size_t n = data.n_obs();
  WorkingResidualSet res;
  res.z.resize(long(n));
  res.v.resize(long(n));
  res.eta.resize(long(n));
  res.e.resize(long(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Observation& obs = data.observations[i];
    double xb = data.covariates.row(obs.user).dot(model.beta.row(obs.item));
    double phi = (std::size_t(obs.user) < model.posteriors.size())
                     ? model.posteriors[std::size_t(obs.user)].mean_at(obs.item)
                     : 0.0;
    double eta = xb + phi;
    res.eta[long(i)] = eta;
    if (model.family == Family::Bernoulli) {
      double p = clip_prob(sigmoid(eta));
      double v = 1.0 / (p * (1.0 - p));
      res.z[long(i)] = eta + (obs.response - p) * v;
      res.v[long(i)] = v;
    } else {
      res.z[long(i)] = obs.response;
      res.v[long(i)] = model.var_noise;
    }
    res.e[long(i)] = res.z[long(i)] - xb;
  }
  return res;
}

EstepResult estep(const UpgModel& model, const Dataset& data,
                  const WorkingResidualSet& residuals, const UpgOptions& opts) {
  const int dim = model.n_items();
  EstepResult out;
  std::vector<UserCounters> counters = build_counters(data, residuals);

  out.posteriors.resize(std::size_t(data.n_users));
  parallel_for(std::size_t(data.n_users), opts.n_threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      UserPosterior& post = out.posteriors[u];
      post.counters = counters[u];
      if (post.counters.empty()) continue;
      Vector rhs = post.counters.rhs(dim);
      const Vector* warm = nullptr;
      if (u < model.posteriors.size() && model.posteriors[u].mean.size() == dim)
        warm = &model.posteriors[u].mean;
      post.mean =
          cg_solve(model.glasso.omega, post.counters, rhs, opts.cg_tol, opts.cg_max_iter, warm).x;
    }
  });

  Matrix cov_sum = sum_user_cov(model.glasso.sigma, counters, opts.n_threads);
  // sum_u mu_u mu_u', accumulated blockwise in fixed chunk order.
  Matrix outer = ordered_chunk_reduce<Matrix>(
      std::size_t(data.n_users), 256, opts.n_threads,
      [&] { return Matrix::Zero(dim, dim).eval(); },
      [&](Matrix& acc, std::size_t u) {
        const Vector& mu = out.posteriors[u].mean;
        if (mu.size() == dim) acc.selfadjointView<Eigen::Lower>().rankUpdate(mu);
      },
      [](Matrix& total, const Matrix& part) {
        total += Matrix(part.selfadjointView<Eigen::Lower>());
      });
  out.s_matrix = (cov_sum + outer) / double(data.n_users);
  out.s_matrix = ((out.s_matrix + out.s_matrix.transpose()) / 2.0).eval();
  return out;
}

UpgModel mstep(const Matrix& s_matrix, const WorkingResidualSet& residuals,
               const Dataset& data, EstepResult estep_result, const UpgModel& current,
               const UpgOptions& opts, bool final_tolerance) {
  UpgModel next = current;
  next.rho = opts.rho;
  next.c_penalty = opts.c_penalty;
  next.posteriors = std::move(estep_result.posteriors);

  GlassoOptions gopt = opts.glasso;
  if (!final_tolerance) gopt.max_sweeps = std::min(gopt.max_sweeps, opts.glasso_sweeps_mid_em);
  if (opts.rho == 0.0) {
    next.glasso = glasso_fit(s_matrix, 0.0, gopt);
  } else {
    const GlassoSolution* warm = current.glasso.omega.rows() == s_matrix.rows()
                                     ? &current.glasso
                                     : nullptr;
    next.glasso = glasso_fit(s_matrix, opts.rho, gopt, warm);
  }

  if (data.family == Family::Bernoulli) {
    Vector offsets(long(data.n_obs()));
    for (std::size_t i = 0; i < data.n_obs(); ++i) {
      const Observation& obs = data.observations[i];
      offsets[long(i)] = next.posteriors[std::size_t(obs.user)].mean_at(obs.item);
    }
    IregOptions iopt;
    iopt.n_threads = opts.n_threads;
    next.beta = fit_ireg_offset(data, opts.c_penalty, offsets, iopt).beta;
  } else {
    next.beta = gaussian_beta_update(data, residuals.z, residuals.v, &next.posteriors,
                                     opts.c_penalty, opts.n_threads);
    // var_noise from the posterior-expected squared residuals under the
    // E-step posterior (covariances reconstructed from the pre-update Sigma).
    std::vector<Vector> post_var(static_cast<std::size_t>(data.n_users));
    parallel_for(std::size_t(data.n_users), opts.n_threads,
                 [&](std::size_t begin, std::size_t end) {
                   for (std::size_t u = begin; u < end; ++u)
                     if (!next.posteriors[u].counters.empty())
                       post_var[u] = woodbury_posterior_diag(current.glasso.sigma,
                                                             next.posteriors[u].counters);
                 });
    double acc = 0.0;
    for (std::size_t i = 0; i < data.n_obs(); ++i) {
      const Observation& obs = data.observations[i];
      const UserPosterior& post = next.posteriors[std::size_t(obs.user)];
      double r = residuals.z[long(i)] - data.covariates.row(obs.user).dot(next.beta.row(obs.item)) -
                 post.mean_at(obs.item);
      int slot = post.counters.find(obs.item);
      acc += r * r + post_var[std::size_t(obs.user)][slot];
    }
    next.var_noise = std::max(acc / double(data.n_obs()), 1e-10);
  }
  return next;
}

UpgModel fit_upg(const Dataset& data, const UpgOptions& opts) {
  if (data.observations.empty()) throw std::invalid_argument("fit_upg: empty dataset");
  if (data.family == Family::Bernoulli && !std::isfinite(opts.c_penalty))
    throw std::invalid_argument("fit_upg: Bernoulli family needs a finite c_penalty");

  const int dim = data.n_items;
  UpgModel model;
  model.family = data.family;
  model.rho = opts.rho;
  model.c_penalty = opts.c_penalty;
  model.posteriors.assign(std::size_t(data.n_users), UserPosterior{});
  model.glasso.omega = sparse_identity(dim);
  model.glasso.sigma = Matrix::Identity(dim, dim);
  model.glasso.rho = opts.rho;

  if (data.family == Family::Bernoulli) {
    IregOptions iopt;
    iopt.n_threads = opts.n_threads;
    model.beta = fit_ireg(data, opts.c_penalty, iopt).beta;
  } else {
    Vector ones = Vector::Ones(long(data.n_obs()));
    Vector y(long(data.n_obs()));
    for (std::size_t i = 0; i < data.n_obs(); ++i) y[long(i)] = data.observations[i].response;
    model.beta = gaussian_beta_update(data, y, ones, nullptr, opts.c_penalty, opts.n_threads);
    double ss = 0.0;
    for (std::size_t i = 0; i < data.n_obs(); ++i) {
      const Observation& obs = data.observations[i];
      double r = obs.response - data.covariates.row(obs.user).dot(model.beta.row(obs.item));
      ss += r * r;
    }
    model.var_noise = std::max(ss / double(data.n_obs()), 1e-8);
  }

  model.converged = false;
  int outer = 0;
  for (; outer < opts.max_outer && !model.converged; ++outer) {
    Matrix beta_outer = model.beta;
    SparseMatrix omega_outer = model.glasso.omega;
    WorkingResidualSet res = working_residuals(model, data);
    for (int em = 0; em < opts.max_em; ++em) {
      if (data.family == Family::Gaussian) {
        res = working_residuals(model, data);  // picks up the current var_noise
      } else {
        refresh_e(res, data, model.beta);  // z, v stay frozen within the outer pass
      }
      EstepResult est = estep(model, data, res, opts);
      Matrix s = std::move(est.s_matrix);
      UpgModel next = mstep(s, res, data, std::move(est), model, opts, false);
      double delta = std::max((next.beta - model.beta).cwiseAbs().maxCoeff(),
                              max_abs_diff(next.glasso.omega, model.glasso.omega));
      model = std::move(next);
      if (opts.fit_log)
        (*opts.fit_log) << "outer=" << outer + 1 << " em=" << em + 1
                        << " glasso_objective=" << model.glasso.objective
                        << " kkt=" << model.glasso.kkt_residual
                        << " var_noise=" << model.var_noise << " delta=" << delta << "\n";
      if (delta <= opts.em_tol) break;
    }
    double outer_delta = std::max((model.beta - beta_outer).cwiseAbs().maxCoeff(),
                                  max_abs_diff(model.glasso.omega, omega_outer));
    if (outer_delta <= opts.outer_tol) model.converged = true;
  }
  model.outer_iterations = outer;

  // Closing pass: full-tolerance glasso, then refresh the posteriors under
  // the final (beta, Omega) so stored means satisfy the final normal
  // equations.
  {
    WorkingResidualSet res = working_residuals(model, data);
    EstepResult est = estep(model, data, res, opts);
    Matrix s = std::move(est.s_matrix);
    model = mstep(s, res, data, std::move(est), model, opts, true);
    res = working_residuals(model, data);
    EstepResult fin = estep(model, data, res, opts);
    model.posteriors = std::move(fin.posteriors);
  }
  return model;
}

double predict(const UpgModel& model, int user, const Eigen::Ref<const Vector>& x, int item) {
  if (item < 0 || item >= model.n_items()) throw std::invalid_argument("predict: bad item index");
  if (x.size() != model.covariate_dim())
    throw std::invalid_argument("predict: covariate dimension mismatch");
  double eta = model.beta.row(item).dot(x);
  if (user >= 0 && std::size_t(user) < model.posteriors.size() &&
      !model.posteriors[std::size_t(user)].counters.empty())
    eta += model.posteriors[std::size_t(user)].mean_at(item);
  return model.family == Family::Bernoulli ? sigmoid(eta) : eta;
}

const UserPosterior& online_update(UpgModel& model, int user, int item, double response,
                                   const Eigen::Ref<const Vector>& x) {
  if (user < 0) throw std::invalid_argument("online_update: bad user index");
  if (item < 0 || item >= model.n_items())
    throw std::invalid_argument("online_update: bad item index");
  if (x.size() != model.covariate_dim())
    throw std::invalid_argument("online_update: covariate dimension mismatch");
  if (std::size_t(user) >= model.posteriors.size())
    model.posteriors.resize(std::size_t(user) + 1);

  UserPosterior& post = model.posteriors[std::size_t(user)];
  double xb = model.beta.row(item).dot(x);
  double z, v;
  if (model.family == Family::Bernoulli) {
    double eta = xb + post.mean_at(item);
    double p = clip_prob(sigmoid(eta));
    v = 1.0 / (p * (1.0 - p));
    z = eta + (response - p) * v;
  } else {
    z = response;
    v = model.var_noise;
  }
  post.counters.add(item, 1.0 / v, (z - xb) / v);
  Vector rhs = post.counters.rhs(model.n_items());
  const Vector* warm = post.mean.size() == model.n_items() ? &post.mean : nullptr;
  post.mean = cg_solve(model.glasso.omega, post.counters, rhs, 1e-8, -1, warm).x;
  return post;
}

double select_rho(const Dataset& train, const std::vector<double>& grid, const UpgOptions& opts,
                  double holdout_fraction) {
  if (grid.empty()) throw std::invalid_argument("select_rho: empty grid");
  auto [head, tail] = temporal_split(train, 1.0 - holdout_fraction);
  double best_rho = grid.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (double rho : grid) {
    UpgOptions o = opts;
    o.rho = rho;
    UpgModel m = fit_upg(head, o);
    double score = 0.0;
    for (const auto& obs : tail.observations) {
      double pred = predict(m, obs.user, tail.covariates.row(obs.user).transpose(), obs.item);
      if (train.family == Family::Gaussian) {
        score += (pred - obs.response) * (pred - obs.response);
      } else {
        double p = clip_prob(pred);
        score -= obs.response * std::log(p) + (1.0 - obs.response) * std::log(1.0 - p);
      }
    }
    if (score < best_score) {
      best_score = score;
      best_rho = rho;
    }
  }
  return best_rho;
}

}  // namespace upg
