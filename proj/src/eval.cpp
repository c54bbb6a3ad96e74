#include "upg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "upg/rng.hpp"

namespace upg {

namespace {

void check_lengths(const std::vector<double>& pred, const std::vector<double>& truth,
                   const char* who) {
  if (pred.size() != truth.size())
    throw std::invalid_argument(std::string(who) + ": length mismatch");
  if (pred.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
}

// Linear interpolation between order statistics, q in [0,1].
double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double pos = q * double(values.size() - 1);
  std::size_t lo = std::size_t(pos);
  std::size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = pos - double(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

int sample_user(Rng& rng, const Vector& cumulative, int n_users) {
  if (cumulative.size() == 0) return rng.uniform_int(n_users);
  double r = rng.uniform() * cumulative[cumulative.size() - 1];
  const double* begin = cumulative.data();
  const double* it = std::lower_bound(begin, begin + cumulative.size(), r);
  return int(it - begin);
}

}  // namespace

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_lengths(pred, truth, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / double(pred.size()));
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_lengths(pred, truth, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / double(pred.size());
}

double click_estimate(const RandomizedLog& log, const Policy& policy) {
  if (log.records.empty()) throw std::invalid_argument("click_estimate: empty log");
  long hits = 0;
  for (const auto& rec : log.records) {
    if (!rec.clicked) continue;
    Vector x = log.covariates.rows() > rec.user ? Vector(log.covariates.row(rec.user).transpose())
                                                : Vector(0);
    int chosen = policy(rec.user, x);
    if (chosen < 0 || chosen >= log.n_items)
      throw std::runtime_error("click_estimate: policy returned an out-of-range item");
    if (chosen == rec.served_item) ++hits;
  }
  return double(log.n_items) * double(hits);
}

double click_lift(double s1, double s2) {
  if (s2 <= 0.0) throw std::invalid_argument("click_lift: baseline estimate must be positive");
  return 100.0 * (s1 / s2 - 1.0);
}

LiftEstimate bootstrap_lift(const RandomizedLog& log, const Policy& policy,
                            const Policy& baseline_policy, int n_boot, std::uint64_t seed) {
  if (n_boot < 1) throw std::invalid_argument("bootstrap_lift: n_boot must be >= 1");
  LiftEstimate out;
  out.point = click_lift(click_estimate(log, policy), click_estimate(log, baseline_policy));

  Rng root(seed);
  std::vector<double> lifts;
  lifts.reserve(std::size_t(n_boot));
  RandomizedLog resampled;
  resampled.n_items = log.n_items;
  resampled.covariates = log.covariates;
  for (int b = 0; b < n_boot; ++b) {
    Rng rng = root.stream(std::uint64_t(b));
    resampled.records.clear();
    resampled.records.reserve(log.records.size());
    for (std::size_t i = 0; i < log.records.size(); ++i)
      resampled.records.push_back(log.records[std::size_t(rng.uniform_int(int(log.records.size())))]);
    lifts.push_back(
        click_lift(click_estimate(resampled, policy), click_estimate(resampled, baseline_policy)));
  }
  out.ci_low = percentile(lifts, 0.025);
  out.ci_high = percentile(lifts, 0.975);
  return out;
}

RandomizedLog simulate_randomized_log(const Matrix& truth_click_prob, const Vector& user_weights,
                                      long t_visits, std::uint64_t seed,
                                      const Matrix* covariates) {
  const int n_users = int(truth_click_prob.rows());
  const int n_items = int(truth_click_prob.cols());
  if (n_users < 1 || n_items < 1)
    throw std::invalid_argument("simulate_randomized_log: empty probability table");
  if (truth_click_prob.minCoeff() < 0.0 || truth_click_prob.maxCoeff() > 1.0)
    throw std::invalid_argument("simulate_randomized_log: probabilities must be in [0,1]");
  Vector cumulative(0);
  if (user_weights.size() > 0) {
    if (user_weights.size() != n_users || user_weights.minCoeff() < 0.0 ||
        user_weights.sum() <= 0.0)
      throw std::invalid_argument("simulate_randomized_log: bad user weights");
    cumulative.resize(n_users);
    double acc = 0.0;
    for (int u = 0; u < n_users; ++u) {
      acc += user_weights[u];
      cumulative[u] = acc;
    }
  }

  RandomizedLog log;
  log.n_items = n_items;
  if (covariates) log.covariates = *covariates;
  log.records.reserve(std::size_t(t_visits));
  Rng rng = Rng(seed).stream(0x51);
  for (long t = 0; t < t_visits; ++t) {
    RandomizedLog::Record rec;
    rec.user = sample_user(rng, cumulative, n_users);
    rec.served_item = rng.uniform_int(n_items);
    rec.clicked = rng.bernoulli(truth_click_prob(rec.user, rec.served_item)) ? 1 : 0;
    log.records.push_back(rec);
  }
  return log;
}

double expected_clicks(const Matrix& truth_click_prob, const Vector& user_weights, long t_visits,
                       const Policy& policy, const Matrix* covariates) {
  const int n_users = int(truth_click_prob.rows());
  double total_weight = 0.0, acc = 0.0;
  for (int u = 0; u < n_users; ++u) {
    double w = user_weights.size() > 0 ? user_weights[u] : 1.0;
    Vector x = (covariates && covariates->rows() > u) ? Vector(covariates->row(u).transpose())
                                                      : Vector(0);
    acc += w * truth_click_prob(u, policy(u, x));
    total_weight += w;
  }
  return double(t_visits) * acc / total_weight;
}

Policy argmax_policy(
    std::function<double(int user, const Eigen::Ref<const Vector>& x, int item)> score,
    int n_items) {
  return [score, n_items](int user, const Eigen::Ref<const Vector>& x) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n_items; ++j) {
      double s = score(user, x, j);
      if (s > best_score) {  // ties keep the smaller index
        best_score = s;
        best = j;
      }
    }
    return best;
  };
}

void write_randomized_log(const RandomizedLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "user_id\tserved_item_id\tclicked\n";
  for (const auto& rec : log.records)
    out << rec.user << '\t' << rec.served_item << '\t' << rec.clicked << "\n";
  if (!out) throw std::runtime_error("short write to " + path);
}

namespace {
[[noreturn]] void log_parse_fail(const std::string& path, std::size_t line_no,
                                 const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}
}  // namespace

RandomizedLog read_randomized_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  RandomizedLog log;
  bool header = true;
  int max_item = -1, max_user = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    RandomizedLog::Record rec;
    if (std::sscanf(line.c_str(), "%d\t%d\t%d", &rec.user, &rec.served_item, &rec.clicked) != 3)
      log_parse_fail(path, line_no, "expected user_id\tserved_item_id\tclicked");
    if (rec.clicked != 0 && rec.clicked != 1)
      log_parse_fail(path, line_no, "clicked must be 0 or 1");
    max_item = std::max(max_item, rec.served_item);
    max_user = std::max(max_user, rec.user);
    log.records.push_back(rec);
  }
  log.n_items = max_item + 1;
  return log;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[512];
  out << "upg-report v1\n";
  if (report.has_rmse) {
    std::snprintf(buf, sizeof buf, "rmse %.17g\nmae %.17g\n", report.rmse, report.mae);
    out << buf;
  }
  if (report.has_clicks) {
    std::snprintf(buf, sizeof buf,
                  "s_estimate %.17g\ns_baseline %.17g\nlift_vs_baseline %.17g\nci_low %.17g\n"
                  "ci_high %.17g\n",
                  report.s_estimate, report.s_baseline, report.lift_vs_baseline, report.ci_low,
                  report.ci_high);
    out << buf;
  }
  // one-line TSV for table assembly
  auto field = [&](bool present, double v) {
    if (!present) return std::string("NA");
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  out << "tsv\t" << field(report.has_rmse, report.rmse) << '\t' << field(report.has_rmse, report.mae)
      << '\t' << field(report.has_clicks, report.s_estimate) << '\t'
      << field(report.has_clicks, report.lift_vs_baseline) << '\t'
      << field(report.has_clicks, report.ci_low) << '\t' << field(report.has_clicks, report.ci_high)
      << "\n";
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace upg
