#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "upg/types.hpp"

namespace upg {

struct Observation {
  int user = 0;
  int item = 0;
  double response = 0.0;
  std::int64_t timestamp = 0;
};

// Indexed response data. External string IDs map bijectively onto dense
// indices; covariate row u always starts with a constant-1 intercept entry.
// Immutable after construction and safe to share read-only across threads.
struct Dataset {
  Family family = Family::Gaussian;
  int n_users = 0;
  int n_items = 0;
  int covariate_dim = 1;
  Matrix covariates;  // n_users x covariate_dim, row u = x_u'
  std::vector<Observation> observations;
  std::vector<std::string> user_ids;  // index -> external id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, int> user_index;  // external id -> index
  std::unordered_map<std::string, int> item_index;

  std::size_t n_obs() const { return observations.size(); }

  // Observation indices grouped by user, in file order within each user.
  std::vector<std::vector<int>> obs_by_user() const;
  std::vector<std::vector<int>> obs_by_item() const;
};

struct SynthTruth {
  Matrix true_beta;   // J x d
  Matrix true_omega;  // J x J symmetric positive definite
  Family family = Family::Gaussian;
  double var_noise = 1.0;  // Gaussian only
  std::uint64_t seed = 0;
};

// MovieLens "UserID::MovieID::Rating::Timestamp" lines. Gaussian family,
// intercept-only covariates (d = 1). Malformed lines raise with the 1-based
// line number.
Dataset parse_movielens(const std::string& path);
void write_movielens(const Dataset& data, const std::string& path);

// TSV with header "user_id\titem_id\tresponse\ttimestamp\tc1...cd".
// Bernoulli family, covariate vector [1, c1..cd]; covariate columns must be
// constant per user.
Dataset parse_event_log(const std::string& path);
void write_event_log(const Dataset& data, const std::string& path);

// Sorts by timestamp (ties keep file order) and cuts at
// floor(train_fraction * n). Both halves keep the full index space.
std::pair<Dataset, Dataset> temporal_split(const Dataset& data, double train_fraction);

struct SynthOptions {
  int obs_per_user = 10;
  double var_noise = 1.0;     // Gaussian noise variance
  double beta_scale = 0.5;    // sd of true coefficients
  double delta = 0.5;         // diagonal boost of the precision
};

// Ground-truth generator for recovery tests. sparsity in [0,1) is the
// fraction of nonzero off-diagonal pairs in the true precision matrix; the
// matrix is made strictly diagonally dominant so it is always PD.
// phi_u ~ MVN(0, Omega^{-1}), responses from eta = x'beta + phi per family.
// Bit-reproducible given the seed.
std::pair<Dataset, SynthTruth> synth_generate(int n_users, int n_items, int covariate_dim,
                                              double sparsity, Family family,
                                              std::uint64_t seed,
                                              const SynthOptions& opts = {});

// Restriction to the top users/items by observation count (ties by index).
// Kept observations are re-indexed densely; covariates and external IDs
// follow.
Dataset subsample_top(const Dataset& data, int n_top_users, int n_top_items);

// Re-expresses data in the reference's index space: shared external IDs keep
// the reference's dense indices, IDs only in data get fresh indices past the
// reference's range. Covariate dimensions must match.
Dataset reindex_like(const Dataset& reference, const Dataset& data);

}  // namespace upg
