#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ser/matrix.hpp"

namespace ser::svm {

enum class KernelKind { linear, rbf };
enum class GammaMode { scale, fixed };
enum class Multiclass { ovr, ovo };

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  GammaMode gamma_mode = GammaMode::scale;
  double gamma = 0.0;  // used when gamma_mode == fixed
  double C = 10.0;

  void validate() const;
};

struct SolverOptions {
  double tol = 1e-3;
  std::size_t max_passes = 10000;  // iteration cap is max_passes * n
  double support_threshold = 1e-8;
};

/// gamma = 1 / (d * var(X)) for "scale" (population variance over all
/// entries); the fixed value otherwise. Zero variance is a DomainError.
double resolve_gamma(const Matrix& X, const KernelSpec& spec);

/// linear: <x, z>; rbf: exp(-gamma * |x - z|^2).
double kernel_eval(std::span<const double> x, std::span<const double> z, KernelKind kind, double gamma);

/// One soft-margin binary machine: f(x) = sum_i coef_i K(sv_i, x) + bias,
/// coef_i = alpha_i * y_i.
struct BinaryModel {
  Matrix support_vectors;
  std::vector<double> dual_coef;
  double bias = 0.0;
  /// sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij at the solution.
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Final maximal KKT violation (m(alpha) - M(alpha)).
  double max_violation = 0.0;
  /// Row indices of the support vectors in the training matrix.
  std::vector<std::size_t> support_indices;
  int positive_class = 0;
  int negative_class = -1;  // -1 means "rest"

  double decision(std::span<const double> x, KernelKind kind, double gamma) const;
};

/// Labels must be -1/+1 with both present.
BinaryModel train_binary(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double gamma,
                         const SolverOptions& options = {});

struct KktReport {
  double min_alpha = 0.0;
  double max_alpha = 0.0;
  double equality_residual = 0.0;  // |sum alpha_i y_i|
  double max_violation = 0.0;      // m(alpha) - M(alpha), recomputed from X
  bool feasible(double C) const { return min_alpha >= 0.0 && max_alpha <= C && equality_residual < 1e-6; }
};

/// Recomputes dual feasibility and stationarity of a trained machine against
/// its training data.
KktReport check_kkt(const BinaryModel& model, const Matrix& X, std::span<const int> y, const KernelSpec& spec,
                    double gamma);

struct SvmModel {
  KernelSpec spec;
  double gamma = 0.0;
  Multiclass strategy = Multiclass::ovr;
  std::size_t dim = 0;
  std::vector<int> classes;  // ascending label codes
  std::vector<BinaryModel> machines;

  /// One value per entry of `classes`: the OvR decision value, or the OvO
  /// vote count.
  std::vector<double> decision_values(std::span<const double> x) const;
};

struct Prediction {
  int label = 0;
  std::vector<double> decision;  // parallel to SvmModel::classes
};

/// Argmax over decision values; ties go to the lowest class code.
Prediction predict(const SvmModel& model, std::span<const double> x);

SvmModel train_multiclass(const Matrix& X, std::span<const int> labels, const KernelSpec& spec,
                          Multiclass strategy = Multiclass::ovr, const SolverOptions& options = {});

std::vector<std::uint8_t> encode_model(const SvmModel& model);
SvmModel decode_model(std::span<const std::uint8_t> bytes);

/// Human-readable counts and objectives.
std::string summary(const SvmModel& model);

std::string kernel_name(KernelKind k);

}  // namespace ser::svm
