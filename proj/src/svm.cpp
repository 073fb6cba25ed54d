#include "ser/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser::svm {

namespace {

constexpr double kTau = 1e-12;
constexpr std::string_view kMagic{"SERSVM\0\0", 8};
constexpr std::uint32_t kVersion = 1;

// Dense kernel matrix over the training rows; shared by every OvR machine.
class KernelMatrix {
 public:
  KernelMatrix(const Matrix& X, KernelKind kind, double gamma) : n_(X.rows), k_(X.rows * X.rows) {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i; j < n_; ++j) {
        const double v = kernel_eval(X.row(i), X.row(j), kind, gamma);
        k_[i * n_ + j] = v;
        k_[j * n_ + i] = v;
      }
    }
  }
  double operator()(std::size_t i, std::size_t j) const { return k_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<double> k_;
};

struct DualSolution {
  std::vector<double> alpha;
  double rho = 0.0;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double max_violation = 0.0;
};

// Second-order working-set selection (maximal violating pair with curvature),
// following the LIBSVM formulation: minimise 1/2 a'Qa - e'a, Q_ij = y_i y_j K_ij.
DualSolution solve_dual(const KernelMatrix& K, std::span<const std::size_t> idx, std::span<const int> y,
                        double C, const SolverOptions& opt) {
  const std::size_t n = idx.size();
  auto kern = [&](std::size_t a, std::size_t b) { return K(idx[a], idx[b]); };

  DualSolution sol;
  sol.alpha.assign(n, 0.0);
  std::vector<double>& alpha = sol.alpha;
  std::vector<double> grad(n, -1.0);
  std::vector<double> diag(n);
  for (std::size_t t = 0; t < n; ++t) diag[t] = kern(t, t);

  auto is_upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto is_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
  auto in_up = [&](std::size_t t) { return y[t] == 1 ? !is_upper(t) : !is_lower(t); };
  auto in_low = [&](std::size_t t) { return y[t] == 1 ? !is_lower(t) : !is_upper(t); };

  const std::size_t max_iter = std::max<std::size_t>(opt.max_passes * std::max<std::size_t>(n, 1), 1);
  const double inf = std::numeric_limits<double>::infinity();
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double gmax = -inf;
    std::ptrdiff_t i = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * grad[t] >= gmax) {
        gmax = -y[t] * grad[t];
        i = static_cast<std::ptrdiff_t>(t);
      }
    }
    double gmax2 = -inf;
    std::ptrdiff_t j = -1;
    double best = inf;
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = y[t] * grad[t];
      gmax2 = std::max(gmax2, v);
      if (i < 0) continue;
      const double b = gmax + v;
      if (b > 0.0) {
        double a = diag[static_cast<std::size_t>(i)] + diag[t] - 2.0 * kern(static_cast<std::size_t>(i), t);
        if (a <= 0.0) a = kTau;
        const double obj = -(b * b) / a;
        if (obj <= best) {
          best = obj;
          j = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    sol.max_violation = gmax + gmax2;
    if (i < 0 || j < 0 || gmax + gmax2 < opt.tol) {
      sol.converged = true;
      break;
    }

    const auto ui = static_cast<std::size_t>(i);
    const auto uj = static_cast<std::size_t>(j);
    const double yi = y[ui], yj = y[uj];
    const double qij = yi * yj * kern(ui, uj);
    const double old_i = alpha[ui], old_j = alpha[uj];
    double ai = old_i, aj = old_j;
    if (y[ui] != y[uj]) {
      double quad = diag[ui] + diag[uj] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[ui] - grad[uj]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) { aj = 0.0; ai = diff; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = -diff; }
      }
      if (diff > 0.0) {
        if (ai > C) { ai = C; aj = C - diff; }
      } else {
        if (aj > C) { aj = C; ai = C + diff; }
      }
    } else {
      double quad = diag[ui] + diag[uj] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[ui] - grad[uj]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > C) {
        if (ai > C) { ai = C; aj = sum - C; }
      } else {
        if (aj < 0.0) { aj = 0.0; ai = sum; }
      }
      if (sum > C) {
        if (aj > C) { aj = C; ai = sum - C; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = sum; }
      }
    }
    alpha[ui] = ai;
    alpha[uj] = aj;
    const double di = ai - old_i, dj = aj - old_j;
    for (std::size_t t = 0; t < n; ++t) {
      grad[t] += y[t] * (yi * kern(ui, t) * di + yj * kern(uj, t) * dj);
    }
  }
  sol.iterations = iter;

  double ub = inf, lb = -inf, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (is_upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (is_lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  sol.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  // With G = Qa - e: 1/2 a'Qa - e'a = 1/2 sum a_t (G_t - 1).
  double v = 0.0;
  for (std::size_t t = 0; t < n; ++t) v += alpha[t] * (grad[t] - 1.0);
  sol.objective = -v / 2.0;
  return sol;
}

void check_finite(const Matrix& X) {
  for (double v : X.data) {
    if (!std::isfinite(v)) throw DataError("SVM training data contains non-finite values");
  }
}

BinaryModel assemble(const Matrix& X, std::span<const std::size_t> idx, std::span<const int> y,
                     const DualSolution& sol, double threshold) {
  BinaryModel m;
  m.bias = -sol.rho;
  m.objective = sol.objective;
  m.iterations = sol.iterations;
  m.converged = sol.converged;
  m.max_violation = sol.max_violation;
  m.support_vectors.cols = X.cols;
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (sol.alpha[t] > threshold) {
      m.support_vectors.append_row(X.row(idx[t]));
      m.dual_coef.push_back(sol.alpha[t] * y[t]);
      m.support_indices.push_back(idx[t]);
    }
  }
  return m;
}

std::pair<double, KernelSpec> prepare(const Matrix& X, const KernelSpec& spec) {
  spec.validate();
  if (X.rows == 0 || X.cols == 0) throw TrainingError("SVM training set is empty");
  check_finite(X);
  const double gamma = spec.kind == KernelKind::rbf ? resolve_gamma(X, spec) : 0.0;
  return {gamma, spec};
}

}  // namespace

void KernelSpec::validate() const {
  if (!(C > 0.0)) throw ConfigError("SVM C must be positive");
  if (gamma_mode == GammaMode::fixed && !(gamma > 0.0)) throw ConfigError("fixed gamma must be positive");
}

std::string kernel_name(KernelKind k) { return k == KernelKind::linear ? "linear" : "rbf"; }

double resolve_gamma(const Matrix& X, const KernelSpec& spec) {
  if (spec.gamma_mode == GammaMode::fixed) {
    if (!(spec.gamma > 0.0)) throw DomainError("fixed gamma must be positive");
    return spec.gamma;
  }
  if (X.data.empty()) throw DomainError("resolve_gamma: empty matrix");
  const double n = static_cast<double>(X.data.size());
  double sum = 0.0;
  for (double v : X.data) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : X.data) ss += (v - mean) * (v - mean);
  const double var = ss / n;
  if (!(var > 0.0)) throw DomainError("resolve_gamma: feature variance is zero");
  return 1.0 / (static_cast<double>(X.cols) * var);
}

double kernel_eval(std::span<const double> x, std::span<const double> z, KernelKind kind, double gamma) {
  if (x.size() != z.size()) {
    throw ShapeError("kernel_eval: dimension " + std::to_string(x.size()) + " vs " + std::to_string(z.size()));
  }
  if (kind == KernelKind::linear) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * z[i];
    return acc;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - z[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

double BinaryModel::decision(std::span<const double> x, KernelKind kind, double gamma) const {
  double acc = bias;
  for (std::size_t s = 0; s < dual_coef.size(); ++s) {
    acc += dual_coef[s] * kernel_eval(support_vectors.row(s), x, kind, gamma);
  }
  return acc;
}

BinaryModel train_binary(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double gamma,
                         const SolverOptions& options) {
  spec.validate();
  if (y.size() != X.rows) throw ShapeError("train_binary: label count does not match rows");
  if (X.rows < 2) throw TrainingError("train_binary: need at least 2 samples");
  check_finite(X);
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw DataError("train_binary: labels must be -1 or +1");
  }
  if (!pos || !neg) throw TrainingError("train_binary: both classes must be present");

  const KernelMatrix K(X, spec.kind, gamma);
  std::vector<std::size_t> idx(X.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto sol = solve_dual(K, idx, y, spec.C, options);
  BinaryModel m = assemble(X, idx, y, sol, options.support_threshold);
  m.positive_class = 1;
  m.negative_class = -1;
  return m;
}

KktReport check_kkt(const BinaryModel& model, const Matrix& X, std::span<const int> y, const KernelSpec& spec,
                    double gamma) {
  const std::size_t n = X.rows;
  std::vector<double> alpha(n, 0.0);
  for (std::size_t s = 0; s < model.support_indices.size(); ++s) {
    alpha[model.support_indices[s]] = model.dual_coef[s] * y[model.support_indices[s]];
  }
  KktReport r;
  r.min_alpha = *std::min_element(alpha.begin(), alpha.end());
  r.max_alpha = *std::max_element(alpha.begin(), alpha.end());
  double eq = 0.0;
  for (std::size_t t = 0; t < n; ++t) eq += alpha[t] * y[t];
  r.equality_residual = std::abs(eq);

  const double C = spec.C;
  double m_up = -std::numeric_limits<double>::infinity();
  double m_low = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    double g = -1.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (alpha[s] != 0.0) g += alpha[s] * y[t] * y[s] * kernel_eval(X.row(t), X.row(s), spec.kind, gamma);
    }
    const double v = -y[t] * g;
    const bool up = y[t] == 1 ? alpha[t] < C : alpha[t] > 0.0;
    const bool low = y[t] == 1 ? alpha[t] > 0.0 : alpha[t] < C;
    if (up) m_up = std::max(m_up, v);
    if (low) m_low = std::min(m_low, v);
  }
  r.max_violation = std::max(0.0, m_up - m_low);
  return r;
}

std::vector<double> SvmModel::decision_values(std::span<const double> x) const {
  if (x.size() != dim) {
    throw ShapeError("SVM expects " + std::to_string(dim) + " features, got " + std::to_string(x.size()));
  }
  std::vector<double> out(classes.size(), 0.0);
  if (strategy == Multiclass::ovr) {
    for (std::size_t c = 0; c < machines.size(); ++c) out[c] = machines[c].decision(x, spec.kind, gamma);
    return out;
  }
  auto slot = [&](int cls) {
    return static_cast<std::size_t>(std::find(classes.begin(), classes.end(), cls) - classes.begin());
  };
  for (const auto& m : machines) {
    const double f = m.decision(x, spec.kind, gamma);
    out[slot(f > 0.0 ? m.positive_class : m.negative_class)] += 1.0;
  }
  return out;
}

Prediction predict(const SvmModel& model, std::span<const double> x) {
  Prediction p;
  p.decision = model.decision_values(x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.decision.size(); ++c) {
    if (p.decision[c] > p.decision[best]) best = c;
  }
  p.label = model.classes.at(best);
  return p;
}

SvmModel train_multiclass(const Matrix& X, std::span<const int> labels, const KernelSpec& spec,
                          Multiclass strategy, const SolverOptions& options) {
  if (labels.size() != X.rows) throw ShapeError("train_multiclass: label count does not match rows");
  auto [gamma, checked] = prepare(X, spec);

  SvmModel model;
  model.spec = checked;
  model.gamma = gamma;
  model.strategy = strategy;
  model.dim = X.cols;
  model.classes.assign(labels.begin(), labels.end());
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  if (model.classes.size() < 2) throw TrainingError("train_multiclass: need at least 2 classes");

  const KernelMatrix K(X, spec.kind, gamma);
  if (strategy == Multiclass::ovr) {
    std::vector<std::size_t> idx(X.rows);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<int> y(X.rows);
    for (int cls : model.classes) {
      for (std::size_t i = 0; i < X.rows; ++i) y[i] = labels[i] == cls ? 1 : -1;
      auto sol = solve_dual(K, idx, y, spec.C, options);
      BinaryModel m = assemble(X, idx, y, sol, options.support_threshold);
      m.positive_class = cls;
      m.negative_class = -1;
      model.machines.push_back(std::move(m));
    }
  } else {
    for (std::size_t a = 0; a < model.classes.size(); ++a) {
      for (std::size_t b = a + 1; b < model.classes.size(); ++b) {
        std::vector<std::size_t> idx;
        std::vector<int> y;
        for (std::size_t i = 0; i < X.rows; ++i) {
          if (labels[i] == model.classes[a]) {
            idx.push_back(i);
            y.push_back(1);
          } else if (labels[i] == model.classes[b]) {
            idx.push_back(i);
            y.push_back(-1);
          }
        }
        auto sol = solve_dual(K, idx, y, spec.C, options);
        BinaryModel m = assemble(X, idx, y, sol, options.support_threshold);
        m.positive_class = model.classes[a];
        m.negative_class = model.classes[b];
        model.machines.push_back(std::move(m));
      }
    }
  }
  return model;
}

std::vector<std::uint8_t> encode_model(const SvmModel& model) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(model.spec.kind == KernelKind::linear ? 0 : 1);
  w.u32(model.spec.gamma_mode == GammaMode::scale ? 0 : 1);
  w.f64(model.spec.gamma);
  w.f64(model.spec.C);
  w.f64(model.gamma);
  w.u32(model.strategy == Multiclass::ovr ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.classes.size()));
  for (int c : model.classes) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(model.machines.size()));
  for (const auto& m : model.machines) {
    w.u32(static_cast<std::uint32_t>(m.positive_class));
    w.u32(static_cast<std::uint32_t>(m.negative_class));
    w.f64(m.bias);
    w.f64(m.objective);
    w.u32(static_cast<std::uint32_t>(m.dual_coef.size()));
    for (std::size_t s = 0; s < m.dual_coef.size(); ++s) {
      w.f64(m.dual_coef[s]);
      for (double v : m.support_vectors.row(s)) w.f64(v);
    }
  }
  return w.take();
}

SvmModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 12 || r.raw(8) != kMagic) throw FormatError("not an SVM model (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) throw UnsupportedFormatError("unsupported SVM model version: " + std::to_string(version));
  SvmModel m;
  m.spec.kind = r.u32() == 0 ? KernelKind::linear : KernelKind::rbf;
  m.spec.gamma_mode = r.u32() == 0 ? GammaMode::scale : GammaMode::fixed;
  m.spec.gamma = r.f64();
  m.spec.C = r.f64();
  m.gamma = r.f64();
  m.strategy = r.u32() == 0 ? Multiclass::ovr : Multiclass::ovo;
  m.dim = r.u32();
  const auto n_classes = r.u32();
  for (std::uint32_t i = 0; i < n_classes; ++i) m.classes.push_back(static_cast<int>(r.u32()));
  const auto n_machines = r.u32();
  for (std::uint32_t i = 0; i < n_machines; ++i) {
    BinaryModel b;
    b.positive_class = static_cast<int>(r.u32());
    b.negative_class = static_cast<int>(static_cast<std::int32_t>(r.u32()));
    b.bias = r.f64();
    b.objective = r.f64();
    const auto n_sv = r.u32();
    b.support_vectors = Matrix(n_sv, m.dim);
    b.dual_coef.resize(n_sv);
    for (std::uint32_t s = 0; s < n_sv; ++s) {
      b.dual_coef[s] = r.f64();
      for (auto& v : b.support_vectors.row(s)) v = r.f64();
    }
    b.converged = true;
    m.machines.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError("SVM model has trailing bytes");
  return m;
}

std::string summary(const SvmModel& model) {
  std::ostringstream os;
  os << "kernel=" << kernel_name(model.spec.kind) << " C=" << model.spec.C << " gamma=" << model.gamma
     << " strategy=" << (model.strategy == Multiclass::ovr ? "ovr" : "ovo") << " dim=" << model.dim << "\n";
  for (const auto& m : model.machines) {
    os << "machine " << m.positive_class << " vs "
       << (m.negative_class < 0 ? std::string("rest") : std::to_string(m.negative_class))
       << ": support_vectors=" << m.dual_coef.size() << " objective=" << m.objective
       << " iterations=" << m.iterations << "\n";
  }
  return os.str();
}

}  // namespace ser::svm
