#include "ser/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

namespace {

constexpr std::string_view kMagic{"SERMODEL", 8};
constexpr std::uint32_t kVersion = 1;

void check_window(const FeatureWindow& w, const PipelineConfig& p) {
  if (w.n_mfcc != p.n_mfcc || w.values.size() != p.n_mfcc * kWindowFrames) {
    throw ConfigError("feature window has " + std::to_string(w.n_mfcc) + " coefficients, model expects " +
                      std::to_string(p.n_mfcc));
  }
}

class SvmClassifier final : public Classifier {
 public:
  SvmClassifier(svm::SvmModel m, const PipelineConfig& p) : model_(std::move(m)), pipeline_(p) {
    if (model_.dim != p.n_mfcc * kWindowFrames) {
      throw ConfigError("SVM input dimension " + std::to_string(model_.dim) + " does not match n_mfcc=" +
                        std::to_string(p.n_mfcc) + " x " + std::to_string(kWindowFrames));
    }
  }
  ModelKind kind() const override { return ModelKind::svm; }
  const PipelineConfig& pipeline() const override { return pipeline_; }
  ClassScores probabilities(const FeatureWindow& w) const override {
    check_window(w, pipeline_);
    const auto d = model_.decision_values(w.values);
    const double mx = *std::max_element(d.begin(), d.end());
    ClassScores out{};
    double sum = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double e = std::exp(d[j] - mx);
      out[static_cast<std::size_t>(model_.classes[j])] = e;
      sum += e;
    }
    for (double& v : out) v /= sum;
    return out;
  }

 private:
  svm::SvmModel model_;
  PipelineConfig pipeline_;
};

class CnnClassifier final : public Classifier {
 public:
  CnnClassifier(nn::CnnModel m, const PipelineConfig& p) : model_(std::move(m)), pipeline_(p) {
    const nn::Shape want{p.n_mfcc, kWindowFrames, 1};
    if (model_.input_shape() != want) {
      throw ConfigError("CNN input " + nn::shape_to_string(model_.input_shape()) + " does not match n_mfcc=" +
                        std::to_string(p.n_mfcc) + " pipeline " + nn::shape_to_string(want));
    }
    if (model_.num_classes() != kNumEmotions) throw ConfigError("CNN must have 8 output classes");
  }
  ModelKind kind() const override { return ModelKind::cnn; }
  const PipelineConfig& pipeline() const override { return pipeline_; }
  ClassScores probabilities(const FeatureWindow& w) const override {
    check_window(w, pipeline_);
    nn::Tensor x({1, pipeline_.n_mfcc, kWindowFrames, 1});
    x.data = w.values;
    const auto p = model_.predict(x);
    ClassScores out{};
    std::copy(p.data.begin(), p.data.end(), out.begin());
    return out;
  }

 private:
  nn::CnnModel model_;
  PipelineConfig pipeline_;
};

void save(const std::filesystem::path& path, ModelKind kind, const PipelineConfig& pipeline,
          std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.str(pipeline.to_json());
  w.u64(payload.size());
  w.raw(payload);
  write_file_bytes(path, w.bytes());
}

}  // namespace

std::unique_ptr<Classifier> make_classifier(svm::SvmModel model, const PipelineConfig& pipeline) {
  return std::make_unique<SvmClassifier>(std::move(model), pipeline);
}

std::unique_ptr<Classifier> make_classifier(nn::CnnModel model, const PipelineConfig& pipeline) {
  return std::make_unique<CnnClassifier>(std::move(model), pipeline);
}

void save_bundle(const std::filesystem::path& path, const svm::SvmModel& model, const PipelineConfig& pipeline) {
  save(path, ModelKind::svm, pipeline, svm::encode_model(model));
}

void save_bundle(const std::filesystem::path& path, nn::CnnModel& model, const PipelineConfig& pipeline) {
  save(path, ModelKind::cnn, pipeline, nn::encode_model(model, false));
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (bytes.size() < 8 || r.raw(8) != kMagic) throw FormatError(path.string() + ": not a model bundle");
  const auto version = r.u32();
  if (version != kVersion) throw UnsupportedFormatError("unsupported model bundle version: " + std::to_string(version));
  const auto kind = r.u32();
  const auto pipeline = PipelineConfig::from_json(r.str());
  const auto n = r.u64();
  const auto payload = r.view(static_cast<std::size_t>(n));
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes in model bundle");
  if (kind == static_cast<std::uint32_t>(ModelKind::svm)) return make_classifier(svm::decode_model(payload), pipeline);
  if (kind == static_cast<std::uint32_t>(ModelKind::cnn)) return make_classifier(nn::decode_model(payload), pipeline);
  throw FormatError(path.string() + ": unknown model kind " + std::to_string(kind));
}

Matrix to_matrix(std::span<const LabeledWindow> windows) {
  Matrix m;
  for (const auto& w : windows) {
    if (m.rows > 0 && w.window.values.size() != m.cols) throw ShapeError("feature windows differ in size");
    m.append_row(w.window.values);
  }
  return m;
}

std::vector<int> label_codes(std::span<const LabeledWindow> windows) {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(code(w.label));
  return out;
}

nn::Dataset to_cnn_dataset(std::span<const LabeledWindow> windows) {
  nn::Dataset d;
  const std::size_t n_mfcc = windows.empty() ? 0 : windows.front().window.n_mfcc;
  d.inputs = nn::Tensor({windows.size(), n_mfcc, kWindowFrames, 1});
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& v = windows[i].window.values;
    if (windows[i].window.n_mfcc != n_mfcc || v.size() != n_mfcc * kWindowFrames) {
      throw ShapeError("feature windows differ in size");
    }
    std::copy(v.begin(), v.end(), d.inputs.data.begin() + static_cast<std::ptrdiff_t>(i * v.size()));
  }
  d.labels = label_codes(windows);
  return d;
}

}  // namespace ser
