#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "upg/dataset.hpp"
#include "upg/types.hpp"

namespace upg {

enum class IisVariant { Pearson, Jaccard };

// Item-item similarity predictor
//   r_j + sum_{k != j} w_jk (r_uk - r_k) / sum_{k != j} w_jk.
// Pearson weights use item-mean-centered ratings over co-raters (fewer than
// two co-raters gives weight 0); Jaccard weights are |clickers(j) n
// clickers(k)| / |clickers(j) u clickers(k)|.
struct IisModel {
  Matrix weights;  // J x J symmetric, diagonal ignored in prediction
  Vector item_means;
  IisVariant variant = IisVariant::Pearson;
};

IisModel fit_iis(const Dataset& data, IisVariant variant, int n_threads = 1);

// history = (item, response) pairs observed for the user. By default the
// denominator uses sum |w_jk|; literal_denominator restores the printed
// sum w_jk form.
double predict_iis(const IisModel& model, const std::vector<std::pair<int, double>>& history,
                   int item, bool literal_denominator = false);

// Aspect mixture model p(j|u) = sum_l p(j|l) p(l|u) fitted by EM on
// positive events only.
struct PlsiModel {
  int k_latent = 1;
  Matrix p_item_given_class;  // K x J, rows sum to one
  Matrix p_class_given_user;  // N_u x K, rows sum to one
  double log_likelihood = 0.0;
  int iterations = 0;
};

PlsiModel fit_plsi(const Dataset& data, int k_latent, double tol = 1e-6, int max_iter = 500,
                   std::uint64_t seed = 42);

// p(j|u); users without training clicks fall back to the average class
// membership.
double predict_plsi(const PlsiModel& model, int user, int item);

// Bilinear random-effects model
//   y ~ N(mu + alpha_u + b_j + q_u'v_j, sigma^2),
//   alpha ~ N(0, var_alpha), b ~ N(0, var_b), q_u ~ MVN(0, I), v_j ~ MVN(0, a I),
// fitted by Monte Carlo EM with Gibbs sampling; a, sigma^2, var_alpha, var_b
// have closed-form M-step updates from the posterior sample moments.
struct BireModel {
  double mu = 0.0;
  Vector alpha;  // posterior means
  Vector b_item;
  Matrix q;  // N_u x K posterior means
  Matrix v;  // J x K posterior means
  double a_prior = 1.0;
  double var_noise = 1.0;
  double var_alpha = 1.0;
  double var_b = 1.0;
  int k_factors = 1;
};

struct BireOptions {
  int n_samples = 100;  // Gibbs sweeps per E-step; first fifth discarded
  int n_em_iter = 20;
  int n_threads = 1;
};

BireModel fit_bire(const Dataset& data, int k_factors, std::uint64_t seed,
                   const BireOptions& opts = {});

double predict_bire(const BireModel& model, int user, int item);

// Gaussian conditional of one user factor given the item factors:
//   Var = (I + sum_j v_j v_j'/sigma2)^{-1},  E = Var * sum_j r_j v_j / sigma2.
// Exposed as the Gibbs building block.
std::pair<Vector, Matrix> bire_factor_conditional(const Matrix& v_rows, const Vector& residuals,
                                                  double sigma2, double prior_var = 1.0);

}  // namespace upg
