#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oracles.hpp"
#include "ser/error.hpp"
#include "ser/rng.hpp"
#include "ser/svm.hpp"

using namespace ser;
using namespace ser::svm;

namespace {

Matrix rows_of(std::initializer_list<std::vector<double>> rows) {
  Matrix m;
  for (const auto& r : rows) m.append_row(r);
  return m;
}

// Solver objective vs the grid oracle for one toy problem.
double toy_gap(const oracle::ToyProblem& p, KernelKind kind, double gamma) {
  Matrix X;
  for (const auto& x : p.x) X.append_row(x);
  KernelSpec spec;
  spec.kind = kind;
  spec.gamma_mode = GammaMode::fixed;
  spec.gamma = kind == KernelKind::rbf ? gamma : 1.0;
  spec.C = 10.0;
  const auto model = train_binary(X, p.y, spec, gamma);
  oracle::Toy4 t;
  t.y = p.y;
  t.C = spec.C;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      long double d2 = 0, dot = 0;
      for (int k = 0; k < 2; ++k) {
        d2 += (p.x[i][k] - p.x[j][k]) * (p.x[i][k] - p.x[j][k]);
        dot += p.x[i][k] * p.x[j][k];
      }
      t.K[i][j] = static_cast<double>(kind == KernelKind::rbf ? std::exp(-gamma * d2) : dot);
    }
  return std::abs(model.objective - oracle::dual_grid_search(t));
}

Matrix blobs(std::size_t per_class, int classes, Rng& rng, std::vector<int>& labels) {
  Matrix X;
  for (int c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> x(5);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = 0.5 * rng.normal() + (k == static_cast<std::size_t>(c % 5) ? 4.0 : 0.0) + (c >= 5 ? -4.0 : 0.0);
      X.append_row(x);
      labels.push_back(c);
    }
  return X;
}

}  // namespace

TEST_SUITE("svm") {

TEST_CASE("kernels") {
  const std::vector<double> a{0, 0}, b{1, 0}, c{1, 2}, d{3, 4};
  CHECK(std::abs(kernel_eval(a, b, KernelKind::rbf, 0.5) - std::exp(-0.5)) < 1e-15);
  CHECK(kernel_eval(c, d, KernelKind::linear, 0.0) == 11.0);
  CHECK(kernel_eval(c, c, KernelKind::rbf, 3.0) == 1.0);
  CHECK_THROWS_AS(kernel_eval(a, std::vector<double>{1, 2, 3}, KernelKind::linear, 0), ShapeError);
}

TEST_CASE("gamma=scale against the variance oracle") {
  Rng rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    Matrix X(20 + rep, 7);
    for (double& v : X.data) v = rng.normal() * (1 + rep) + rep;
    const long double var = oracle::population_variance(X.data);
    const double expect = static_cast<double>(1.0L / (7 * var));
    const double g = resolve_gamma(X, {});
    CHECK(std::abs(g - expect) <= 1e-12 * expect);
    Matrix X2 = X;
    for (double& v : X2.data) v *= 2;
    CHECK(std::abs(resolve_gamma(X2, {}) - g / 4) <= 1e-12 * g);
  }
  CHECK_THROWS_AS(resolve_gamma(Matrix(3, 2, 1.0), {}), DomainError);
  KernelSpec fixed;
  fixed.gamma_mode = GammaMode::fixed;
  fixed.gamma = 0.25;
  CHECK(resolve_gamma(Matrix(3, 2, 1.0), fixed) == 0.25);
}

TEST_CASE("XOR with RBF and C=10 fits all four points") {
  const Matrix X = rows_of({{0, 0}, {1, 1}, {1, 0}, {0, 1}});
  const std::vector<int> y{-1, -1, 1, 1};
  KernelSpec spec;
  const double gamma = resolve_gamma(X, spec);
  const auto m = train_binary(X, y, spec, gamma);
  CHECK(m.converged);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m.decision(X.row(i), spec.kind, gamma) * y[i] > 0);
  const auto kkt = check_kkt(m, X, y, spec, gamma);
  CHECK(kkt.feasible(spec.C));
  CHECK(kkt.max_violation <= 1e-3 + 1e-12);

  const std::vector<int> codes{0, 0, 1, 1};
  const auto mc = train_multiclass(X, codes, spec);
  for (std::size_t i = 0; i < 4; ++i) CHECK(predict(mc, X.row(i)).label == codes[i]);
}

TEST_CASE("separable pair has the closed-form dual") {
  // Hard margin on {-1, +1}: alpha = 2 / |x1 - x2|^2 = 0.5, objective 0.5.
  const Matrix X = rows_of({{-1.0}, {1.0}});
  const std::vector<int> y{-1, 1};
  KernelSpec spec;
  spec.kind = KernelKind::linear;
  const auto m = train_binary(X, y, spec, 0.0);
  CHECK(std::abs(m.objective - 0.5) < 1e-9);
  CHECK(std::abs(m.bias) < 1e-9);
  CHECK(std::abs(m.decision(std::vector<double>{1.0}, spec.kind, 0) - 1.0) < 1e-9);
}

TEST_CASE("solver objective matches the 4-point grid oracle") {
  const auto grid = oracle::toy_grid();
  CHECK(grid.size() == 882);
  double worst = 0;
  for (std::size_t i = 0; i < grid.size(); i += 7) {
    worst = std::max(worst, toy_gap(grid[i], KernelKind::rbf, 0.5));
    worst = std::max(worst, toy_gap(grid[i], KernelKind::linear, 0.0));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("KKT feasibility on random problems") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 10 + rng.uniform_index(40);
    Matrix X(n, 3);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i % 2 ? 1 : -1;
      for (std::size_t k = 0; k < 3; ++k) X(i, k) = rng.normal() + 0.5 * y[i];
    }
    KernelSpec spec;
    spec.kind = rep % 2 ? KernelKind::linear : KernelKind::rbf;
    spec.C = rep % 3 == 0 ? 0.5 : 10.0;
    const double gamma = resolve_gamma(X, spec);
    const auto m = train_binary(X, y, spec, gamma);
    REQUIRE(m.converged);
    const auto kkt = check_kkt(m, X, y, spec, gamma);
    CHECK(kkt.feasible(spec.C));
    CHECK(kkt.max_violation <= 1e-3 + 1e-9);
  }
}

TEST_CASE("well separated blobs, both strategies") {
  Rng rng(6);
  std::vector<int> labels;
  const Matrix X = blobs(25, 8, rng, labels);
  for (auto strategy : {Multiclass::ovr, Multiclass::ovo}) {
    const auto m = train_multiclass(X, labels, {}, strategy);
    CHECK(m.classes.size() == 8);
    CHECK(m.machines.size() == (strategy == Multiclass::ovr ? 8u : 28u));
    std::size_t right = 0;
    for (std::size_t i = 0; i < X.rows; ++i) right += predict(m, X.row(i)).label == labels[i];
    CHECK(static_cast<double>(right) / X.rows >= 0.99);
  }
}

TEST_CASE("ties go to the lowest class code") {
  SvmModel m;
  m.spec.kind = KernelKind::linear;
  m.dim = 1;
  m.classes = {2, 5};
  for (int c : m.classes) {
    BinaryModel b;
    b.positive_class = c;
    b.bias = 0.3;
    b.support_vectors = Matrix(0, 1);
    m.machines.push_back(b);
  }
  CHECK(predict(m, std::vector<double>{7.0}).label == 2);
  CHECK_THROWS_AS(predict(m, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("model serialization round trip") {
  Rng rng(7);
  std::vector<int> labels;
  const Matrix X = blobs(10, 4, rng, labels);
  const auto m = train_multiclass(X, labels, {}, Multiclass::ovo);
  const auto bytes = encode_model(m);
  const auto back = decode_model(bytes);
  CHECK(encode_model(back) == bytes);
  for (std::size_t i = 0; i < X.rows; ++i) CHECK(predict(back, X.row(i)).decision == predict(m, X.row(i)).decision);
  auto bad = bytes;
  bad[2] ^= 0xff;
  CHECK_THROWS_AS(decode_model(bad), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(decode_model(bad), FormatError);
  CHECK(summary(m).find("strategy=ovo") != std::string::npos);
}

TEST_CASE("training input validation") {
  const Matrix X = rows_of({{0, 0}, {1, 1}});
  CHECK_THROWS_AS(train_binary(X, std::vector<int>{1, 1}, {}, 1.0), TrainingError);
  CHECK_THROWS_AS(train_binary(X, std::vector<int>{1}, {}, 1.0), ShapeError);
  KernelSpec bad;
  bad.C = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(train_multiclass(X, std::vector<int>{3, 3}, {}), TrainingError);
}

TEST_CASE("training is deterministic") {
  Rng rng(8);
  std::vector<int> labels;
  const Matrix X = blobs(12, 3, rng, labels);
  CHECK(encode_model(train_multiclass(X, labels, {})) == encode_model(train_multiclass(X, labels, {})));
}

}
