#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ser/rng.hpp"

namespace ser::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_to_string(const Shape& s);

/// Row-major buffer. Batched activations are (N, ...sample shape); image
/// samples are (H, W, C).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  /// Elements per leading-axis slice.
  std::size_t stride0() const { return shape.empty() ? 0 : data.size() / shape[0]; }
  bool all_finite() const;
};

enum class Padding { same, valid };
enum class Activation { none, relu, softmax };
enum class LayerKind { conv2d, maxpool2d, dropout, flatten, dense };
enum class Mode { train, infer };

/// Conv kernels are 3x3 and pools 2x2/stride 2.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;  // conv filters or dense units
  Padding padding = Padding::valid;
  Activation activation = Activation::none;
  double rate = 0.0;  // dropout

  static LayerSpec conv2d(std::size_t filters, Padding p, Activation a = Activation::relu) {
    return {LayerKind::conv2d, filters, p, a, 0.0};
  }
  static LayerSpec maxpool2d() { return {LayerKind::maxpool2d, 0, Padding::valid, Activation::none, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, Padding::valid, Activation::none, rate}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, Padding::valid, Activation::none, 0.0}; }
  static LayerSpec dense(std::size_t units, Activation a) { return {LayerKind::dense, units, Padding::valid, a, 0.0}; }
};

/// A trainable tensor with its gradient and RMSProp accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor accum;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerSpec spec() const = 0;
  /// Keras-style class name, e.g. "Conv2D".
  virtual std::string type_name() const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode, Rng& rng) = 0;
  /// Inference-mode forward without caching; safe to call concurrently.
  virtual Tensor infer(const Tensor& x) const = 0;
  /// Returns dL/dx and overwrites the gradients of this layer's params.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  /// Appends the piecewise-linear state of the last forward pass (ReLU
  /// on/off bits, pool argmax indices).
  virtual void kink_pattern(std::vector<std::size_t>&) const {}

  std::size_t param_count();
  const Shape& input_shape() const { return in_shape_; }
  const Shape& output_shape() const { return out_shape_; }
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

 protected:
  Shape in_shape_;
  Shape out_shape_;
  std::string name_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape);

/// Glorot-uniform weights, zero biases.
void init_glorot(Layer& layer, Rng& rng);

// Free kernels, exposed for oracle tests. Inputs are batched (N, H, W, C);
// conv weights are (3, 3, Cin, Cout).
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding);
struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};
PoolResult maxpool2d_forward(const Tensor& input);
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Row-wise over the last axis, max-subtracted.
Tensor softmax(const Tensor& logits);
/// Inverted dropout. Infer mode and rate 0 are the identity.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

/// Mean over rows of -ln(max(p_true, 1e-12)).
double cross_entropy_loss(const Tensor& probs, std::span<const int> labels);

struct LayerAudit {
  std::string name;
  std::string type;
  Shape output_shape;
  std::size_t params = 0;
};

class CnnModel {
 public:
  CnnModel(Shape input_shape, std::uint64_t init_seed);

  /// Appends a layer, names it Keras-style and Glorot-initialises it.
  void add(const LayerSpec& spec);

  /// x is (N, ...input_shape). Returns the final activations (probabilities
  /// when the head is softmax) and caches everything backward() needs.
  Tensor forward(const Tensor& x, Mode mode, Rng& rng);
  /// Inference-mode probabilities; does not touch the training cache.
  Tensor predict(const Tensor& x) const;

  /// Gradients of the mean cross-entropy of the last forward pass. A softmax
  /// head uses the fused (p - onehot) / N logit gradient. Returns the loss.
  double backward(std::span<const int> labels);

  std::vector<Param*> params();
  std::size_t param_count();
  /// Concatenated Layer::kink_pattern of the last forward pass.
  std::vector<std::size_t> kink_pattern() const;
  std::vector<LayerAudit> audit();
  /// Keras-style summary ending in "Total params: N".
  std::string summary();

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const;
  std::size_t num_classes() const;
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const;

  std::uint64_t init_seed() const { return init_seed_; }
  std::uint64_t iterations() const { return iterations_; }
  void set_iterations(std::uint64_t t) { iterations_ = t; }
  void invalidate_cache() { cache_valid_ = false; }

 private:
  Shape input_shape_;
  std::uint64_t init_seed_;
  Rng init_rng_;
  std::uint64_t iterations_ = 0;
  std::vector<std::unique_ptr<Layer>> layers_;
  Tensor last_output_;
  bool cache_valid_ = false;
};

struct PaperCnnOptions {
  std::size_t n_mfcc = 13;
  std::size_t n_frames = 26;
  std::size_t filters_block1 = 32;
  std::size_t filters_block2 = 64;
  std::size_t dense_units = 512;
  double dropout1 = 0.25;
  double dropout2 = 0.25;
  double dropout3 = 0.5;
  std::size_t n_classes = 8;
  std::uint64_t seed = 0;
};

/// Conv(32,same) Conv(32,valid) Pool Drop Conv(64,same) Conv(64,valid) Pool
/// Drop Flatten Dense(512,relu) Drop Dense(8,softmax). Throws ShapeError
/// when the input cannot survive both pooling stages.
CnnModel build_paper_cnn(const PaperCnnOptions& options = {});

struct TrainConfig {
  double lr = 1e-4;
  double decay = 1e-6;
  double rho = 0.9;
  double epsilon = 1e-7;
  std::size_t batch_size = 32;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
};

/// lr_t = lr / (1 + decay * t); acc = rho*acc + (1-rho)*g^2;
/// p -= lr_t * g / (sqrt(acc) + epsilon).
void rmsprop_step(std::span<Param* const> params, const TrainConfig& cfg, std::uint64_t t);

struct Dataset {
  Tensor inputs;  // (N, ...input_shape)
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  /// Inference-mode training loss before the first update.
  double initial_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded per-epoch shuffling, mini-batch RMSProp. Epoch metrics are
/// inference-mode loss/accuracy after the epoch. Throws NumericalError as
/// soon as a loss, gradient or parameter turns non-finite.
TrainResult train(CnnModel& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  Tensor probs;
};
Evaluation evaluate(const CnnModel& model, const Dataset& data, std::size_t batch_size = 64);

std::string history_to_csv(const std::vector<EpochStats>& history);

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  /// Elements whose +-h evaluations crossed a ReLU or pooling kink; these
  /// are excluded from the error.
  std::size_t skipped = 0;
  /// |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2).
  double rel_error = 0.0;
  double max_abs_diff = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Central differences on every parameter element. The same dropout masks
/// are replayed by reseeding the forward pass with dropout_seed. An element
/// is skipped when either perturbed pass changes the kink pattern, since the
/// loss is not differentiable across that interval.
GradCheckReport gradient_check(CnnModel& model, const Tensor& x, std::span<const int> labels, double h = 1e-5,
                               std::uint64_t dropout_seed = 0, Mode mode = Mode::train);

/// Checkpoint: "SERCNN\0\0", u32 version, input shape, layer specs, params
/// as little-endian float32, optional RMSProp accumulators.
std::vector<std::uint8_t> encode_model(CnnModel& model, bool include_optimizer);
CnnModel decode_model(std::span<const std::uint8_t> bytes);

}  // namespace ser::nn
