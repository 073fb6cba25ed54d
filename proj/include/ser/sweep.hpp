#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ser/dataset.hpp"
#include "ser/features.hpp"
#include "ser/svm.hpp"

namespace ser {

struct SweepRow {
  svm::KernelKind kernel = svm::KernelKind::rbf;
  std::size_t n_mfcc = 0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct SweepMean {
  svm::KernelKind kernel = svm::KernelKind::rbf;
  std::size_t n_mfcc = 0;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population
};

struct SweepResult {
  std::vector<SweepRow> raw;  // sorted by kernel, n_mfcc, run
  std::vector<SweepMean> mean;

  /// kernel,n_mfcc,run,seed,accuracy
  std::string raw_csv() const;
  /// kernel,n_mfcc,runs,mean_accuracy,std_accuracy
  std::string mean_csv() const;
};

/// 10, 20, ..., 120 plus 13, ascending.
std::vector<std::size_t> default_sweep_points();
/// "lo:hi:step" with optional ",a,b" extras, e.g. "10:120:10,13".
std::vector<std::size_t> parse_sweep_range(const std::string& text);

struct SweepOptions {
  std::vector<svm::KernelKind> kernels{svm::KernelKind::rbf, svm::KernelKind::linear};
  std::vector<std::size_t> points = default_sweep_points();
  std::size_t runs = 10;
  /// Split seed per run; empty means base_seed + run.
  std::vector<std::uint64_t> seeds;
  std::uint64_t base_seed = 0;
  double C = 10.0;
  SplitRatios ratios;
  std::size_t workers = 1;
  svm::SolverOptions solver;
};

/// Features for one n_mfcc value. Called at most once per point; must be
/// safe to call from several threads when workers > 1.
using FeatureProvider = std::function<ExtractedSet(std::size_t n_mfcc)>;

/// Per point and run: a fresh stratified split from that run's seed, one
/// SVM per kernel trained on the train split and scored on the test split.
/// Output does not depend on the worker count.
SweepResult run_svm_sweep(const FeatureProvider& features, const SweepOptions& options);

}  // namespace ser
