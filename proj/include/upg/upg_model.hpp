#pragma once

#include <iosfwd>
#include <vector>

#include "upg/dataset.hpp"
#include "upg/glasso.hpp"
#include "upg/linalg.hpp"
#include "upg/regression.hpp"
#include "upg/types.hpp"

namespace upg {

// Posterior state of one user's latent affinity vector. The covariance is
// implicit: it is (K_u + Omega)^{-1}, reconstructed on demand from the
// counters, so only the counters and the mean are stored.
struct UserPosterior {
  Vector mean;            // empty means identically zero
  UserCounters counters;

  double mean_at(int item) const {
    return (mean.size() > item && item >= 0) ? mean[item] : 0.0;
  }
};

// Per-observation working residuals of the PQL linearization. For Gaussian
// responses z = y and v = var_noise, so no approximation is incurred.
struct WorkingResidualSet {
  Vector z;    // working response
  Vector v;    // working variance, > 0
  Vector eta;  // linear predictor at formation time
  Vector e;    // z - x'beta
};

struct UpgOptions {
  double rho = 0.0;
  // Ridge strength C of the per-item coefficient update. +inf disables the
  // ridge (plain weighted least squares); Bernoulli fits require it finite.
  double c_penalty = std::numeric_limits<double>::infinity();
  double outer_tol = 1e-4;
  int max_outer = 10;
  double em_tol = 1e-4;
  int max_em = 20;
  double cg_tol = 1e-8;
  int cg_max_iter = -1;  // < 0: 10 * J
  GlassoOptions glasso;
  // Partial optimization of the glasso criterion mid-EM; the closing solve
  // always runs with glasso.max_sweeps.
  int glasso_sweeps_mid_em = 10;
  int n_threads = 1;
  std::ostream* fit_log = nullptr;
};

struct UpgModel {
  Family family = Family::Gaussian;
  double var_noise = 1.0;  // Gaussian only
  double rho = 0.0;
  double c_penalty = std::numeric_limits<double>::infinity();
  Matrix beta;  // J x d
  GlassoSolution glasso;
  std::vector<UserPosterior> posteriors;  // indexed by user
  bool converged = true;
  int outer_iterations = 0;

  int n_items() const { return int(beta.rows()); }
  int covariate_dim() const { return int(beta.cols()); }
};

// Z_uj = eta + (y - p)/(p(1-p)), V = 1/(p(1-p)) at the current estimates,
// with p clipped to [1e-6, 1-1e-6]. Gaussian responses pass through:
// z = y, v = var_noise.
WorkingResidualSet working_residuals(const UpgModel& model, const Dataset& data);

struct EstepResult {
  std::vector<UserPosterior> posteriors;
  Matrix s_matrix;  // sum_u (Sigma_u + mu_u mu_u') / N_u
};

// Posterior means by conjugate gradients, the covariance sum by the
// aggregated low-rank form. Users with no observations contribute Sigma and
// a zero mean.
EstepResult estep(const UpgModel& model, const Dataset& data,
                  const WorkingResidualSet& residuals, const UpgOptions& opts);

// Omega by glasso on s_matrix (warm-started from the current solution; plain
// inversion when rho = 0), beta by per-item penalized regression with the
// posterior means as offsets, and for the Gaussian family var_noise from the
// posterior-expected squared residuals.
UpgModel mstep(const Matrix& s_matrix, const WorkingResidualSet& residuals,
               const Dataset& data, EstepResult estep_result, const UpgModel& current,
               const UpgOptions& opts, bool final_tolerance = false);

UpgModel fit_upg(const Dataset& data, const UpgOptions& opts);

// x'beta_j plus the posterior mean when the user has one; falls back to the
// pure covariate score otherwise. Bernoulli predictions pass through the
// sigmoid.
double predict(const UpgModel& model, int user, const Eigen::Ref<const Vector>& x, int item);

// Folds one new observation into the user's counters and re-solves the
// posterior mean by warm-started conjugate gradients, Omega fixed. Calls for
// the same user must be externally serialized.
const UserPosterior& online_update(UpgModel& model, int user, int item, double response,
                                   const Eigen::Ref<const Vector>& x);

// Grid search on a held-out tail of the training split (last fraction by
// timestamp). Returns the rho with the lowest held-out RMSE (Gaussian) or
// mean negative log-likelihood (Bernoulli).
double select_rho(const Dataset& train, const std::vector<double>& grid,
                  const UpgOptions& opts, double holdout_fraction = 0.1);

}  // namespace upg
