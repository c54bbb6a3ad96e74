#include "upg/model_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace upg {

namespace {

std::string g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_matrix(std::ostream& os, const char* key, const Matrix& m) {
  os << key << ' ' << m.rows() << ' ' << m.cols() << "\n";
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) os << (j ? " " : "") << g(m(i, j));
    os << "\n";
  }
}

void write_vector(std::ostream& os, const char* key, const Vector& v) {
  os << key << ' ' << v.size() << "\n";
  for (long i = 0; i < v.size(); ++i) os << (i ? " " : "") << g(v[i]);
  if (v.size()) os << "\n";
}

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path), path_(path) {
    if (!in_) throw std::runtime_error("cannot open " + path);
  }

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }

  void expect(const std::string& key) {
    std::string w = word();
    if (w != key) fail("expected '" + key + "', found '" + w + "'");
  }

  // strtod-based so that "inf" and "nan" written by %.17g round-trip
  double number() {
    std::string w = word();
    char* end = nullptr;
    double v = std::strtod(w.c_str(), &end);
    if (end != w.c_str() + w.size()) fail("expected a number, found '" + w + "'");
    return v;
  }

  long integer() {
    long v;
    if (!(in_ >> v)) fail("expected an integer");
    return v;
  }

  Matrix matrix(const char* key) {
    expect(key);
    long rows = integer(), cols = integer();
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) m(i, j) = number();
    return m;
  }

  Vector vector(const char* key) {
    expect(key);
    long n = integer();
    Vector v(n);
    for (long i = 0; i < n; ++i) v[i] = number();
    return v;
  }

  [[noreturn]] void fail(const std::string& what) {
    throw std::runtime_error(path_ + ": " + what);
  }

 private:
  std::ifstream in_;
  std::string path_;
};

void write_glasso(std::ostream& os, const GlassoSolution& sol) {
  os << "rho " << g(sol.rho) << "\n";
  long nnz = 0;
  for (int k = 0; k < sol.omega.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(sol.omega, k); it; ++it)
      if (it.row() <= it.col() && it.value() != 0.0) ++nnz;
  os << "omega " << sol.omega.rows() << ' ' << nnz << "\n";
  for (int k = 0; k < sol.omega.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(sol.omega, k); it; ++it)
      if (it.row() <= it.col() && it.value() != 0.0)
        os << it.row() << ' ' << it.col() << ' ' << g(it.value()) << "\n";
}

GlassoSolution read_glasso(Reader& r) {
  GlassoSolution sol;
  r.expect("rho");
  sol.rho = r.number();
  r.expect("omega");
  long dim = r.integer(), nnz = r.integer();
  std::vector<Eigen::Triplet<double>> upper;
  upper.reserve(std::size_t(nnz));
  for (long e = 0; e < nnz; ++e) {
    long i = r.integer(), j = r.integer();
    double v = r.number();
    upper.emplace_back(int(i), int(j), v);
  }
  sol.omega = sparse_from_upper(int(dim), upper);
  Eigen::LLT<Matrix> llt((Matrix(sol.omega)));
  if (llt.info() != Eigen::Success) r.fail("stored precision matrix is not PD");
  sol.sigma = llt.solve(Matrix::Identity(dim, dim));
  return sol;
}

}  // namespace

const char* model_kind(const AnyModel& model) {
  switch (model.index()) {
    case 0: return "constant";
    case 1: return "mp";
    case 2: return "ireg";
    case 3: return "iis";
    case 4: return "plsi";
    case 5: return "bire";
    default: return "upg";
  }
}

void save_model(const AnyModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "upg-model v1\nkind " << model_kind(model) << "\n";

  if (const auto* m = std::get_if<ConstantModel>(&model)) {
    out << "mu " << g(m->mu) << "\n";
  } else if (const auto* m = std::get_if<MpModel>(&model)) {
    out << "mu " << g(m->mu) << "\nvar_alpha " << g(m->var_alpha) << "\nvar_b " << g(m->var_b)
        << "\nvar_noise " << g(m->var_noise) << "\nconverged " << (m->converged ? 1 : 0) << "\n";
    write_vector(out, "alpha", m->alpha);
    write_vector(out, "b_item", m->b_item);
  } else if (const auto* m = std::get_if<IregModel>(&model)) {
    out << "family " << family_name(m->family) << "\nc_penalty " << g(m->c_penalty) << "\n";
    write_matrix(out, "beta", m->beta);
  } else if (const auto* m = std::get_if<IisModel>(&model)) {
    out << "variant " << (m->variant == IisVariant::Pearson ? "pearson" : "jaccard") << "\n";
    write_vector(out, "item_means", m->item_means);
    long nnz = 0;
    for (long i = 0; i < m->weights.rows(); ++i)
      for (long j = i + 1; j < m->weights.cols(); ++j)
        if (m->weights(i, j) != 0.0) ++nnz;
    out << "weights " << m->weights.rows() << ' ' << nnz << "\n";
    for (long i = 0; i < m->weights.rows(); ++i)
      for (long j = i + 1; j < m->weights.cols(); ++j)
        if (m->weights(i, j) != 0.0) out << i << ' ' << j << ' ' << g(m->weights(i, j)) << "\n";
  } else if (const auto* m = std::get_if<PlsiModel>(&model)) {
    out << "k_latent " << m->k_latent << "\n";
    write_matrix(out, "p_item_given_class", m->p_item_given_class);
    write_matrix(out, "p_class_given_user", m->p_class_given_user);
  } else if (const auto* m = std::get_if<BireModel>(&model)) {
    out << "k_factors " << m->k_factors << "\nmu " << g(m->mu) << "\na_prior " << g(m->a_prior)
        << "\nvar_noise " << g(m->var_noise) << "\nvar_alpha " << g(m->var_alpha) << "\nvar_b "
        << g(m->var_b) << "\n";
    write_vector(out, "alpha", m->alpha);
    write_vector(out, "b_item", m->b_item);
    write_matrix(out, "q", m->q);
    write_matrix(out, "v", m->v);
  } else if (const auto* m = std::get_if<UpgModel>(&model)) {
    out << "family " << family_name(m->family) << "\nvar_noise " << g(m->var_noise)
        << "\nc_penalty " << g(m->c_penalty) << "\n";
    write_matrix(out, "beta", m->beta);
    write_glasso(out, m->glasso);
    long with_counters = 0;
    for (const auto& p : m->posteriors)
      if (!p.counters.empty()) ++with_counters;
    out << "posteriors " << m->posteriors.size() << ' ' << with_counters << "\n";
    for (std::size_t u = 0; u < m->posteriors.size(); ++u) {
      const auto& c = m->posteriors[u].counters;
      if (c.empty()) continue;
      out << u << ' ' << c.size() << "\n";
      for (std::size_t i = 0; i < c.size(); ++i)
        out << c.active_items[i] << ' ' << g(c.k_values[i]) << ' ' << g(c.u_values[i]) << "\n";
    }
  }
  out << "end\n";
  if (!out) throw std::runtime_error("short write to " + path);
}

AnyModel load_model(const std::string& path) {
  Reader r(path);
  r.expect("upg-model");
  r.expect("v1");
  r.expect("kind");
  std::string kind = r.word();

  if (kind == "constant") {
    ConstantModel m;
    r.expect("mu");
    m.mu = r.number();
    r.expect("end");
    return m;
  }
  if (kind == "mp") {
    MpModel m;
    r.expect("mu");
    m.mu = r.number();
    r.expect("var_alpha");
    m.var_alpha = r.number();
    r.expect("var_b");
    m.var_b = r.number();
    r.expect("var_noise");
    m.var_noise = r.number();
    r.expect("converged");
    m.converged = r.integer() != 0;
    m.alpha = r.vector("alpha");
    m.b_item = r.vector("b_item");
    r.expect("end");
    return m;
  }
  if (kind == "ireg") {
    IregModel m;
    r.expect("family");
    m.family = r.word() == "gaussian" ? Family::Gaussian : Family::Bernoulli;
    r.expect("c_penalty");
    m.c_penalty = r.number();
    m.beta = r.matrix("beta");
    r.expect("end");
    return m;
  }
  if (kind == "iis") {
    IisModel m;
    r.expect("variant");
    m.variant = r.word() == "pearson" ? IisVariant::Pearson : IisVariant::Jaccard;
    m.item_means = r.vector("item_means");
    r.expect("weights");
    long dim = r.integer(), nnz = r.integer();
    m.weights = Matrix::Zero(dim, dim);
    for (long e = 0; e < nnz; ++e) {
      long i = r.integer(), j = r.integer();
      double v = r.number();
      m.weights(i, j) = m.weights(j, i) = v;
    }
    r.expect("end");
    return m;
  }
  if (kind == "plsi") {
    PlsiModel m;
    r.expect("k_latent");
    m.k_latent = int(r.integer());
    m.p_item_given_class = r.matrix("p_item_given_class");
    m.p_class_given_user = r.matrix("p_class_given_user");
    r.expect("end");
    return m;
  }
  if (kind == "bire") {
    BireModel m;
    r.expect("k_factors");
    m.k_factors = int(r.integer());
    r.expect("mu");
    m.mu = r.number();
    r.expect("a_prior");
    m.a_prior = r.number();
    r.expect("var_noise");
    m.var_noise = r.number();
    r.expect("var_alpha");
    m.var_alpha = r.number();
    r.expect("var_b");
    m.var_b = r.number();
    m.alpha = r.vector("alpha");
    m.b_item = r.vector("b_item");
    m.q = r.matrix("q");
    m.v = r.matrix("v");
    r.expect("end");
    return m;
  }
  if (kind == "upg") {
    UpgModel m;
    r.expect("family");
    m.family = r.word() == "gaussian" ? Family::Gaussian : Family::Bernoulli;
    r.expect("var_noise");
    m.var_noise = r.number();
    r.expect("c_penalty");
    m.c_penalty = r.number();
    m.beta = r.matrix("beta");
    m.glasso = read_glasso(r);
    m.rho = m.glasso.rho;
    r.expect("posteriors");
    long n_users = r.integer(), with_counters = r.integer();
    m.posteriors.assign(std::size_t(n_users), UserPosterior{});
    for (long e = 0; e < with_counters; ++e) {
      long u = r.integer(), n_active = r.integer();
      UserCounters& c = m.posteriors[std::size_t(u)].counters;
      for (long i = 0; i < n_active; ++i) {
        c.active_items.push_back(int(r.integer()));
        c.k_values.push_back(r.number());
        c.u_values.push_back(r.number());
      }
    }
    r.expect("end");
    // means recomputed from the stored counters
    for (auto& p : m.posteriors)
      if (!p.counters.empty())
        p.mean = cg_solve(m.glasso.omega, p.counters, p.counters.rhs(m.n_items())).x;
    return m;
  }
  r.fail("unknown model kind '" + kind + "'");
}

}  // namespace upg
