#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "ser/features.hpp"
#include "ser/labels.hpp"
#include "ser/matrix.hpp"
#include "ser/nn.hpp"
#include "ser/svm.hpp"

namespace ser {

enum class ModelKind { svm, cnn };

using ClassScores = std::array<double, kNumEmotions>;

/// A trained model bundled with the pipeline config it was trained under.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual ModelKind kind() const = 0;
  virtual const PipelineConfig& pipeline() const = 0;
  /// Probabilities over the 8 classes, summing to 1. SVM decision values go
  /// through a softmax; classes the SVM never saw get 0.
  virtual ClassScores probabilities(const FeatureWindow& window) const = 0;
};

/// Both throw ConfigError when the model input does not match n_mfcc x 26.
std::unique_ptr<Classifier> make_classifier(svm::SvmModel model, const PipelineConfig& pipeline);
std::unique_ptr<Classifier> make_classifier(nn::CnnModel model, const PipelineConfig& pipeline);

/// Bundle: "SERMODEL", u32 version, u32 kind, pipeline JSON, model payload.
void save_bundle(const std::filesystem::path& path, const svm::SvmModel& model, const PipelineConfig& pipeline);
void save_bundle(const std::filesystem::path& path, nn::CnnModel& model, const PipelineConfig& pipeline);
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

/// Flattened windows as rows.
Matrix to_matrix(std::span<const LabeledWindow> windows);
std::vector<int> label_codes(std::span<const LabeledWindow> windows);
/// (N, n_mfcc, 26, 1) inputs.
nn::Dataset to_cnn_dataset(std::span<const LabeledWindow> windows);

}  // namespace ser
