#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ser/labels.hpp"
#include "ser/matrix.hpp"

namespace ser {

namespace nn {
class CnnModel;
struct Dataset;
}  // namespace nn
namespace svm {
struct SvmModel;
}

/// Square count matrix, rows = true class, cols = predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t classes = kNumEmotions) : k(classes), counts(classes * classes, 0) {}
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows);

  std::size_t& at(std::size_t t, std::size_t p) { return counts[t * k + p]; }
  std::size_t at(std::size_t t, std::size_t p) const { return counts[t * k + p]; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t t) const;
  std::size_t col_sum(std::size_t p) const;
};

/// Throws DataError on length mismatch or a label outside [0, classes).
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t classes = kNumEmotions);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Empty predicted column gives precision 0, empty row gives recall 0, and
/// F1 is 0 when both are 0.
std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm);

/// trace / total; 0 for an empty matrix.
double accuracy(const ConfusionMatrix& cm);
/// Pooled TP / (TP + FN) over all classes.
double micro_recall(const ConfusionMatrix& cm);

/// Rank of the true class counts strictly larger scores plus equal scores at
/// lower class codes; a row is correct when that rank is below k.
double top_k_accuracy(const Matrix& scores, std::span<const int> truth, std::size_t k);

/// Index of the largest score, lowest index on ties.
int argmax(std::span<const double> row);

/// One-vs-rest ROC-AUC per class (Mann-Whitney, ties count half). NaN for a
/// class without positive or negative samples.
std::vector<double> roc_auc_ovr(const Matrix& scores, std::span<const int> truth);

struct MetricsReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  std::vector<double> top_k;  // top_k[i] is top-(i+1) accuracy
  std::vector<double> roc_auc;
  std::size_t n = 0;

  std::string to_text() const;
  /// Header row of class names, then one row per true class.
  std::string confusion_csv() const;
  /// class,precision,recall,f1,support
  std::string per_class_csv() const;
  std::string top_k_csv() const;
  /// Writes confusion.csv, per_class.csv and top_k.csv; returns their paths.
  std::vector<std::filesystem::path> write_csv(const std::filesystem::path& dir) const;
};

/// scores is (N, classes); predictions are the row argmax.
MetricsReport make_report(const Matrix& scores, std::span<const int> truth);

/// Missing classes in an SVM get -inf scores. Throws ConfigError when the
/// feature dimension does not match the model.
MetricsReport evaluate_model(const svm::SvmModel& model, const Matrix& X, std::span<const int> truth);
MetricsReport evaluate_model(const nn::CnnModel& model, const nn::Dataset& data);

struct ReferenceValue {
  EmotionLabel label;
  double accuracy_percent;
};
/// Published per-class accuracies, shown next to measured values and never
/// asserted.
inline constexpr std::array<ReferenceValue, 3> kReferenceClassAccuracy{
    {{EmotionLabel::angry, 86.8}, {EmotionLabel::disgust, 78.0}, {EmotionLabel::calm, 72.0}}};
inline constexpr double kReferenceCnnTop1Percent = 85.0;
inline constexpr double kReferenceSvmPercent = 48.11;

}  // namespace ser
