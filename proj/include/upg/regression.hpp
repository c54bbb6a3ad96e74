#pragma once

#include <vector>

#include "upg/dataset.hpp"
#include "upg/types.hpp"

namespace upg {

// Per-item ridge logistic regression,
//   min_beta 1/2 beta'beta + C * sum_u -log lik(y_u; x_u'beta).
struct IregModel {
  Matrix beta;  // J x d
  double c_penalty = 1.0;
  Family family = Family::Bernoulli;
};

struct IregOptions {
  double grad_tol = 1e-6;
  int max_newton = 200;
  int n_threads = 1;
  // When set, receives the per-step objective of every Newton iteration for
  // item trace_item (used by the monotonicity checks).
  std::vector<double>* objective_trace = nullptr;
  int trace_item = 0;
};

IregModel fit_ireg(const Dataset& data, double c_penalty, const IregOptions& opts = {});

// Same fit with a fixed per-observation offset added to the linear predictor
// (the random-effect posterior means during UPG M-steps).
IregModel fit_ireg_offset(const Dataset& data, double c_penalty, const Vector& offsets,
                          const IregOptions& opts = {});

double predict_ireg(const IregModel& model, const Eigen::Ref<const Vector>& x, int item);

// Cross-validated choice of C by held-out log-likelihood.
double select_c_penalty(const Dataset& data, const std::vector<double>& grid,
                        int n_folds = 5, std::uint64_t seed = 42);

// Global-mean predictor.
double fit_constant(const Dataset& data);

// Two-way random-effects model y = mu + alpha_u + b_j + eps with normal
// priors on both main effects, fitted by EM. The E-step alternates over the
// two effects, each conditioned on the other's current posterior means
// (posterior variances are kept and enter the M-step moments).
struct MpModel {
  double mu = 0.0;
  Vector alpha;   // posterior means of the user effects
  Vector b_item;  // posterior means of the item effects
  double var_alpha = 1.0;
  double var_b = 1.0;
  double var_noise = 1.0;
  bool converged = true;
  int iterations = 0;
};

MpModel fit_mp(const Dataset& data, double tol = 1e-6, int max_iter = 200);

// mu + alpha_u + b_j with zeros substituted for out-of-range indices.
double predict_mp(const MpModel& model, int user, int item);

}  // namespace upg
