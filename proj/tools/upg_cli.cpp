// upg: fit/evaluate the UPG recommender and its baselines from the command
// line. One key=value config file drives every run; explicit flags override
// config keys. All randomness flows from the single `seed` key.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "upg/baselines.hpp"
#include "upg/dataset.hpp"
#include "upg/eval.hpp"
#include "upg/model_io.hpp"
#include "upg/parallel.hpp"
#include "upg/regression.hpp"
#include "upg/rng.hpp"
#include "upg/upg_model.hpp"

using namespace upg;

namespace {

const std::set<std::string> kKnownKeys = {
    "model",       "family",      "format",       "train",        "test",
    "input",       "model_in",    "model_out",    "report_out",   "graph_out",
    "log_out",     "fit_log",     "predictions_out", "train_out", "test_out",
    "rho",         "c_penalty",   "k_factors",    "k_latent",     "seed",
    "threads",     "outer_tol",   "max_outer",    "em_tol",       "max_em",
    "cg_tol",      "glasso_tol",  "kkt_tol",      "max_sweeps",   "mp_tol",
    "mp_max_iter", "plsi_tol",    "plsi_max_iter", "bire_samples", "bire_em_iter",
    "train_fraction", "top_k",    "t_visits",     "n_boot",
    "iis_literal_denominator", "penalize_diagonal"};

struct RunConfig {
  std::map<std::string, std::string> kv;

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!kKnownKeys.count(key))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key '" + key +
                                 "'");
      kv[key] = value;
    }
  }

  void set(const std::string& key, const std::string& value) { kv[key] = value; }
  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  }

  std::string required(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty())
      throw std::runtime_error("config key '" + key + "' is required for this command");
    return it->second;
  }

  double num(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end != it->second.c_str() + it->second.size())
      throw std::runtime_error("config key '" + key + "': bad number '" + it->second + "'");
    return v;
  }

  long integer(const std::string& key, long fallback) const {
    double v = num(key, double(fallback));
    return long(v);
  }
};

Family config_family(const RunConfig& cfg) {
  std::string f = cfg.str("family", "gaussian");
  if (f == "gaussian") return Family::Gaussian;
  if (f == "bernoulli") return Family::Bernoulli;
  throw std::runtime_error("family must be gaussian or bernoulli, got '" + f + "'");
}

Dataset load_dataset(const RunConfig& cfg, const std::string& path) {
  std::string format = cfg.str("format");
  if (format.empty())
    format = config_family(cfg) == Family::Gaussian ? "movielens" : "eventlog";
  if (format == "movielens") return parse_movielens(path);
  if (format == "eventlog") return parse_event_log(path);
  throw std::runtime_error("format must be movielens or eventlog, got '" + format + "'");
}

int config_threads(const RunConfig& cfg) {
  return int(cfg.integer("threads", default_thread_count()));
}

UpgOptions upg_options(const RunConfig& cfg, Family family) {
  UpgOptions opts;
  opts.rho = cfg.num("rho", 0.0);
  opts.c_penalty = cfg.num("c_penalty",
                           family == Family::Bernoulli ? 1.0
                                                       : std::numeric_limits<double>::infinity());
  opts.outer_tol = cfg.num("outer_tol", 1e-4);
  opts.max_outer = int(cfg.integer("max_outer", 10));
  opts.em_tol = cfg.num("em_tol", 1e-4);
  opts.max_em = int(cfg.integer("max_em", 20));
  opts.cg_tol = cfg.num("cg_tol", 1e-8);
  opts.glasso.tol = cfg.num("glasso_tol", 1e-4);
  opts.glasso.kkt_tol = cfg.num("kkt_tol", 1e-5);
  opts.glasso.max_sweeps = int(cfg.integer("max_sweeps", 200));
  opts.glasso.penalize_diagonal = cfg.integer("penalize_diagonal", 1) != 0;
  opts.n_threads = config_threads(cfg);
  return opts;
}

// Per-user training history (item, mean response) for the IIS predictor.
std::vector<std::vector<std::pair<int, double>>> build_history(const Dataset& train) {
  std::vector<std::vector<std::pair<int, double>>> hist(
      static_cast<std::size_t>(train.n_users));
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (const auto& o : train.observations) {
    auto& cell = acc[{o.user, o.item}];
    cell.first += o.response;
    cell.second += 1;
  }
  for (const auto& [key, cell] : acc)
    hist[std::size_t(key.first)].emplace_back(key.second, cell.first / cell.second);
  return hist;
}

struct Predictor {
  AnyModel model;
  const Dataset* train = nullptr;  // optional context
  std::vector<std::vector<std::pair<int, double>>> history;
  bool literal_denominator = false;
  double fallback = 0.0;  // response-scale fallback for out-of-model items

  void prepare(const RunConfig& cfg) {
    if (train) {
      if (std::holds_alternative<IisModel>(model)) history = build_history(*train);
      double sum = 0.0;
      for (const auto& o : train->observations) sum += o.response;
      if (!train->observations.empty()) fallback = sum / double(train->n_obs());
    }
    literal_denominator = cfg.integer("iis_literal_denominator", 0) != 0;
  }

  int n_items() const {
    if (const auto* m = std::get_if<IregModel>(&model)) return int(m->beta.rows());
    if (const auto* m = std::get_if<IisModel>(&model)) return int(m->weights.rows());
    if (const auto* m = std::get_if<MpModel>(&model)) return int(m->b_item.size());
    if (const auto* m = std::get_if<PlsiModel>(&model)) return int(m->p_item_given_class.cols());
    if (const auto* m = std::get_if<BireModel>(&model)) return int(m->b_item.size());
    if (const auto* m = std::get_if<UpgModel>(&model)) return m->n_items();
    return 0;
  }

  double operator()(int user, const Vector& x, int item) const {
    if (const auto* m = std::get_if<ConstantModel>(&model)) return m->mu;
    if (item >= n_items() || item < 0) return fallback;
    if (const auto* m = std::get_if<MpModel>(&model)) return predict_mp(*m, user, item);
    if (const auto* m = std::get_if<IregModel>(&model)) return predict_ireg(*m, x, item);
    if (const auto* m = std::get_if<IisModel>(&model)) {
      const static std::vector<std::pair<int, double>> empty;
      const auto& h =
          (user >= 0 && std::size_t(user) < history.size()) ? history[std::size_t(user)] : empty;
      return predict_iis(*m, h, item, literal_denominator);
    }
    if (const auto* m = std::get_if<PlsiModel>(&model)) return predict_plsi(*m, user, item);
    if (const auto* m = std::get_if<BireModel>(&model)) return predict_bire(*m, user, item);
    return predict(std::get<UpgModel>(model), user, x, item);
  }
};

AnyModel fit_any(const RunConfig& cfg, const Dataset& train, std::ostream* fit_log) {
  std::string kind = cfg.required("model");
  std::uint64_t seed = std::uint64_t(cfg.integer("seed", 42));
  int threads = config_threads(cfg);
  if (kind == "constant") {
    double mu = fit_constant(train);
    if (fit_log) (*fit_log) << "constant mu=" << mu << "\n";
    return ConstantModel{mu};
  }
  if (kind == "mp") {
    MpModel m = fit_mp(train, cfg.num("mp_tol", 1e-6), int(cfg.integer("mp_max_iter", 200)));
    if (fit_log)
      (*fit_log) << "mp iterations=" << m.iterations << " var_noise=" << m.var_noise
                 << " converged=" << m.converged << "\n";
    return m;
  }
  if (kind == "ireg") {
    double c = cfg.num("c_penalty", 0.0);
    if (c <= 0.0) c = select_c_penalty(train, {0.01, 0.1, 1, 10, 100}, 5, seed);
    IregOptions opts;
    opts.n_threads = threads;
    IregModel m = fit_ireg(train, c, opts);
    if (fit_log) (*fit_log) << "ireg c_penalty=" << c << "\n";
    return m;
  }
  if (kind == "iis") {
    IisVariant variant =
        train.family == Family::Gaussian ? IisVariant::Pearson : IisVariant::Jaccard;
    return fit_iis(train, variant, threads);
  }
  if (kind == "plsi") {
    return fit_plsi(train, int(cfg.integer("k_latent", 10)), cfg.num("plsi_tol", 1e-6),
                    int(cfg.integer("plsi_max_iter", 500)), seed);
  }
  if (kind == "bire") {
    BireOptions opts;
    opts.n_samples = int(cfg.integer("bire_samples", 100));
    opts.n_em_iter = int(cfg.integer("bire_em_iter", 20));
    opts.n_threads = threads;
    return fit_bire(train, int(cfg.integer("k_factors", 15)), seed, opts);
  }
  if (kind == "upg") {
    UpgOptions opts = upg_options(cfg, train.family);
    opts.fit_log = fit_log;
    return fit_upg(train, opts);
  }
  throw std::runtime_error("unknown model '" + kind + "'");
}

int cmd_fit(const RunConfig& cfg) {
  Dataset train = load_dataset(cfg, cfg.required("train"));
  std::string family = cfg.str("family", "gaussian");
  if ((family == "gaussian") != (train.family == Family::Gaussian))
    throw std::runtime_error("config family does not match the train file format");

  std::ostringstream fit_log;
  AnyModel model = fit_any(cfg, train, &fit_log);
  save_model(model, cfg.required("model_out"));
  std::string log_path = cfg.str("fit_log", cfg.str("log_out"));
  if (!log_path.empty()) {
    std::ofstream log(log_path);
    log << fit_log.str();
  }
  std::cout << "fit " << model_kind(model) << " -> " << cfg.required("model_out") << "\n";
  return 0;
}

int cmd_predict(const RunConfig& cfg) {
  Predictor pred;
  pred.model = load_model(cfg.required("model_in"));
  Dataset test = load_dataset(cfg, cfg.required("test"));
  std::optional<Dataset> train;
  if (cfg.has("train")) {
    train = load_dataset(cfg, cfg.str("train"));
    test = reindex_like(*train, test);
    pred.train = &*train;
  }
  pred.prepare(cfg);
  std::ofstream out(cfg.required("predictions_out"));
  if (!out) throw std::runtime_error("cannot write " + cfg.required("predictions_out"));
  out << "user_id\titem_id\tprediction\n";
  for (const auto& obs : test.observations) {
    Vector x = test.covariates.row(obs.user).transpose();
    out << test.user_ids[std::size_t(obs.user)] << '\t' << test.item_ids[std::size_t(obs.item)]
        << '\t' << pred(obs.user, x, obs.item) << "\n";
  }
  if (!out) throw std::runtime_error("short write");
  return 0;
}

EvalReport score_gaussian(const Predictor& pred, const Dataset& test) {
  std::vector<double> predictions, truths;
  for (const auto& obs : test.observations) {
    Vector x = test.covariates.row(obs.user).transpose();
    predictions.push_back(pred(obs.user, x, obs.item));
    truths.push_back(obs.response);
  }
  EvalReport report;
  report.has_rmse = true;
  report.rmse = rmse(predictions, truths);
  report.mae = mae(predictions, truths);
  return report;
}

int cmd_evaluate(const RunConfig& cfg) {
  Predictor pred;
  pred.model = load_model(cfg.required("model_in"));
  Family family = config_family(cfg);
  bool gaussian_model = !std::holds_alternative<IregModel>(pred.model) &&
                        !std::holds_alternative<PlsiModel>(pred.model);
  if (std::holds_alternative<UpgModel>(pred.model))
    gaussian_model = std::get<UpgModel>(pred.model).family == Family::Gaussian;
  if (std::holds_alternative<IisModel>(pred.model))
    gaussian_model = std::get<IisModel>(pred.model).variant == IisVariant::Pearson;
  if ((family == Family::Gaussian) != gaussian_model)
    throw std::runtime_error("model family does not match the configured family");

  std::optional<Dataset> train;
  if (cfg.has("train")) train = load_dataset(cfg, cfg.str("train"));

  EvalReport report;
  if (family == Family::Gaussian) {
    Dataset test = load_dataset(cfg, cfg.required("test"));
    if (train) {
      test = reindex_like(*train, test);
      pred.train = &*train;
    }
    pred.prepare(cfg);
    report = score_gaussian(pred, test);
  } else {
    // randomized-log protocol: S(M) and lift over the random baseline
    RandomizedLog log = read_randomized_log(cfg.required("test"));
    if (train) {
      log.covariates = train->covariates;
      log.n_items = std::max(log.n_items, train->n_items);
      pred.train = &*train;
    }
    pred.prepare(cfg);
    const int j_dim = std::max(log.n_items, pred.n_items());
    log.n_items = j_dim;
    Policy policy = argmax_policy(
        [&](int user, const Eigen::Ref<const Vector>& x, int item) {
          Vector xv = x.size() ? Vector(x) : Vector::Ones(1);
          return pred(user, xv, item);
        },
        j_dim);
    std::uint64_t seed = std::uint64_t(cfg.integer("seed", 42));
    Policy random_baseline = [j_dim, seed](int user, const Eigen::Ref<const Vector>&) {
      Rng rng = Rng(seed).stream(0xba5e, std::uint64_t(user));
      return rng.uniform_int(j_dim);
    };
    report.has_clicks = true;
    report.s_estimate = click_estimate(log, policy);
    report.s_baseline = click_estimate(log, random_baseline);
    LiftEstimate lift = bootstrap_lift(log, policy, random_baseline,
                                       int(cfg.integer("n_boot", 20)), seed);
    report.lift_vs_baseline = lift.point;
    report.ci_low = lift.ci_low;
    report.ci_high = lift.ci_high;
  }
  write_report(report, cfg.required("report_out"));
  if (report.has_rmse) std::cout << "rmse " << report.rmse << " mae " << report.mae << "\n";
  if (report.has_clicks)
    std::cout << "s_estimate " << report.s_estimate << " lift " << report.lift_vs_baseline << "\n";
  return 0;
}

int cmd_online_replay(const RunConfig& cfg) {
  AnyModel any = load_model(cfg.required("model_in"));
  auto* model = std::get_if<UpgModel>(&any);
  if (!model) throw std::runtime_error("online-replay requires a upg model");
  Dataset test = load_dataset(cfg, cfg.required("test"));
  if (cfg.has("train")) {
    Dataset train = load_dataset(cfg, cfg.str("train"));
    test = reindex_like(train, test);
  }
  if (test.observations.empty()) throw std::runtime_error("online-replay: empty test set");

  std::vector<int> order(test.observations.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return test.observations[std::size_t(a)].timestamp < test.observations[std::size_t(b)].timestamp;
  });
  std::vector<double> predictions, truths;
  const int j_dim = model->n_items();
  for (int oi : order) {
    const Observation& obs = test.observations[std::size_t(oi)];
    Vector x = test.covariates.row(obs.user).transpose();
    if (obs.item >= j_dim) continue;  // outside the trained item space
    predictions.push_back(predict(*model, obs.user, x, obs.item));
    truths.push_back(obs.response);
    online_update(*model, obs.user, obs.item, obs.response, x);
  }
  EvalReport report;
  report.has_rmse = true;
  report.rmse = rmse(predictions, truths);
  report.mae = mae(predictions, truths);
  write_report(report, cfg.required("report_out"));
  std::cout << "rmse " << report.rmse << " mae " << report.mae << "\n";
  return 0;
}

int cmd_export_graph(const RunConfig& cfg) {
  AnyModel any = load_model(cfg.required("model_in"));
  auto* model = std::get_if<UpgModel>(&any);
  if (!model) throw std::runtime_error("export-graph requires a upg model");
  std::vector<std::string> item_ids;
  if (cfg.has("train")) {
    Dataset train = load_dataset(cfg, cfg.str("train"));
    item_ids = train.item_ids;
  }
  for (int j = int(item_ids.size()); j < model->n_items(); ++j)
    item_ids.push_back("item_" + std::to_string(j));
  write_graph_edges(cfg.required("graph_out"), model->glasso.omega, item_ids);

  Matrix pc = partial_correlations(model->glasso.omega);
  auto top = top_pairs(pc, int(cfg.integer("top_k", 10)));
  for (const auto& pair : top)
    std::cout << item_ids[std::size_t(pair.item_a)] << '\t' << item_ids[std::size_t(pair.item_b)]
              << '\t' << pair.value << "\n";
  return 0;
}

int cmd_simulate_log(const RunConfig& cfg) {
  Predictor pred;
  pred.model = load_model(cfg.required("model_in"));
  Dataset users = load_dataset(cfg, cfg.required("train"));
  pred.train = &users;
  pred.prepare(cfg);
  const int j_dim = pred.n_items();
  Matrix table(users.n_users, j_dim);
  for (int u = 0; u < users.n_users; ++u) {
    Vector x = users.covariates.row(u).transpose();
    for (int j = 0; j < j_dim; ++j)
      table(u, j) = std::min(1.0, std::max(0.0, pred(u, x, j)));
  }
  RandomizedLog log =
      simulate_randomized_log(table, Vector(0), cfg.integer("t_visits", 100000),
                              std::uint64_t(cfg.integer("seed", 42)), &users.covariates);
  write_randomized_log(log, cfg.required("log_out"));
  std::cout << "simulated " << log.records.size() << " visits\n";
  return 0;
}

int cmd_split(const RunConfig& cfg) {
  Dataset data = load_dataset(cfg, cfg.required("input"));
  auto [train, test] = temporal_split(data, cfg.num("train_fraction", 0.75));
  std::string format = cfg.str("format");
  bool movielens = format.empty() ? data.family == Family::Gaussian : format == "movielens";
  if (movielens) {
    write_movielens(train, cfg.required("train_out"));
    write_movielens(test, cfg.required("test_out"));
  } else {
    write_event_log(train, cfg.required("train_out"));
    write_event_log(test, cfg.required("test_out"));
  }
  std::cout << "train " << train.n_obs() << " test " << test.n_obs() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UPG hierarchical recommender"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--set", overrides, "override config keys (key=value, repeatable)");
    for (const auto& key : kKnownKeys)
      sub->add_option_function<std::string>(
          "--" + key, [&cfg, key](const std::string& v) { cfg.set(key, v); });
  };

  auto* fit = app.add_subcommand("fit", "fit a model and persist it");
  auto* predict_cmd = app.add_subcommand("predict", "write per-observation predictions");
  auto* evaluate = app.add_subcommand("evaluate", "score a model on held-out data");
  auto* online = app.add_subcommand("online-replay", "prequential predict-then-update replay");
  auto* graph = app.add_subcommand("export-graph", "partial-correlation edge list");
  auto* simulate = app.add_subcommand("simulate-log", "randomized serving log from a model");
  auto* split = app.add_subcommand("split", "temporal train/test split");
  for (auto* sub : {fit, predict_cmd, evaluate, online, graph, simulate, split}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig merged;
    if (!config_path.empty()) merged.load_file(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::runtime_error("--set needs key=value, got " + kv);
      std::string key = kv.substr(0, eq);
      if (!kKnownKeys.count(key)) throw std::runtime_error("unknown key '" + key + "'");
      merged.set(key, kv.substr(eq + 1));
    }
    for (const auto& [k, v] : cfg.kv) merged.set(k, v);  // explicit flags win

    if (fit->parsed()) return cmd_fit(merged);
    if (predict_cmd->parsed()) return cmd_predict(merged);
    if (evaluate->parsed()) return cmd_evaluate(merged);
    if (online->parsed()) return cmd_online_replay(merged);
    if (graph->parsed()) return cmd_export_graph(merged);
    if (simulate->parsed()) return cmd_simulate_log(merged);
    if (split->parsed()) return cmd_split(merged);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
