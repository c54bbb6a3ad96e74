#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "upg/types.hpp"

namespace upg {

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
double mae(const std::vector<double>& pred, const std::vector<double>& truth);

// Log of uniformly randomized serving: one served item per visit record.
struct RandomizedLog {
  struct Record {
    int user = 0;
    int served_item = 0;
    int clicked = 0;
  };
  std::vector<Record> records;
  int n_items = 0;
  Matrix covariates;  // n_users x d; may be empty when covariates are unknown
};

// Deterministic item-selection rule. The covariate row is empty when the log
// carries none.
using Policy = std::function<int(int user, const Eigen::Ref<const Vector>& x)>;

// S(M) = J * #{clicked records where the policy picks the served item}.
// Unbiased for the expected click count of serving with M, because serving
// was uniform.
double click_estimate(const RandomizedLog& log, const Policy& policy);

// 100 * (s1/s2 - 1).
double click_lift(double s1, double s2);

struct LiftEstimate {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// Records resampled with replacement n_boot times; point estimate from the
// original sample, interval from the 2.5/97.5 empirical percentiles (linear
// interpolation between order statistics).
LiftEstimate bootstrap_lift(const RandomizedLog& log, const Policy& policy,
                            const Policy& baseline_policy, int n_boot = 20,
                            std::uint64_t seed = 42);

// t_visits records: user from the weight sampler (uniform when empty), item
// uniform over columns of truth, click Bernoulli from the table.
RandomizedLog simulate_randomized_log(const Matrix& truth_click_prob,
                                      const Vector& user_weights, long t_visits,
                                      std::uint64_t seed,
                                      const Matrix* covariates = nullptr);

// Expected total clicks of policy M over t_visits under the same user
// distribution: T * sum_u pi_u * p(u, M(u)).
double expected_clicks(const Matrix& truth_click_prob, const Vector& user_weights,
                       long t_visits, const Policy& policy,
                       const Matrix* covariates = nullptr);

// Argmax policy over per-item scores with ascending-index tie-break.
Policy argmax_policy(std::function<double(int user, const Eigen::Ref<const Vector>& x, int item)>
                         score,
                     int n_items);

// TSV "user_id\tserved_item_id\tclicked" by dense index.
void write_randomized_log(const RandomizedLog& log, const std::string& path);
RandomizedLog read_randomized_log(const std::string& path);

struct EvalReport {
  bool has_rmse = false;
  double rmse = 0.0;
  double mae = 0.0;
  bool has_clicks = false;
  double s_estimate = 0.0;
  double s_baseline = 0.0;
  double lift_vs_baseline = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

void write_report(const EvalReport& report, const std::string& path);

}  // namespace upg
