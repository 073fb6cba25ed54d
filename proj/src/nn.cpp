#include "ser/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ser/binary_io.hpp"
#include "ser/csv.hpp"
#include "ser/error.hpp"

namespace ser::nn {

namespace {

constexpr std::string_view kMagic{"SERCNN\0\0", 8};
constexpr std::uint32_t kVersion = 1;
constexpr double kProbFloor = 1e-12;

Shape batched(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Shape sample_shape(const Tensor& t) { return Shape(t.shape.begin() + 1, t.shape.end()); }

void expect_sample_shape(const Tensor& x, const Shape& expected, const std::string& who) {
  if (x.shape.empty() || sample_shape(x) != expected) {
    throw ShapeError(who + ": expected input (N, " + shape_to_string(expected).substr(1) + ", got " +
                     shape_to_string(x.shape));
  }
}

void apply_relu(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

void softmax_rows(Tensor& t) {
  const std::size_t k = t.shape.back();
  const std::size_t rows = t.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = t.data.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
  }
}

void apply_activation(Tensor& t, Activation a) {
  if (a == Activation::relu) apply_relu(t);
  else if (a == Activation::softmax) softmax_rows(t);
}

// Converts dL/dy into dL/dz for y = act(z), given the forward output y.
void activation_backward(Tensor& grad, const Tensor& y, Activation a) {
  if (a == Activation::relu) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!(y.data[i] > 0.0)) grad.data[i] = 0.0;
    }
  } else if (a == Activation::softmax) {
    const std::size_t k = y.shape.back();
    const std::size_t rows = y.size() / k;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = y.data.data() + r * k;
      double* g = grad.data.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * p[j];
      for (std::size_t j = 0; j < k; ++j) g[j] = p[j] * (g[j] - dot);
    }
  }
}

void conv_accumulate(const Tensor& input, const Tensor& weights, Tensor& out, std::size_t pad) {
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), ci = input.dim(3);
  const std::size_t ho = out.dim(1), wo = out.dim(2), co = out.dim(3);
  const double* in = input.data.data();
  const double* wt = weights.data.data();
  double* o = out.data.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* op = o + ((b * ho + oy) * wo + ox) * co;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* ip = in + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * ci;
            const double* wp = wt + (ky * 3 + kx) * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const double v = ip[c];
              const double* wr = wp + c * co;
              for (std::size_t f = 0; f < co; ++f) op[f] += v * wr[f];
            }
          }
        }
      }
    }
  }
}

Shape conv_output_shape(const Shape& in, std::size_t filters, Padding p) {
  if (in.size() != 3) throw ShapeError("Conv2D needs (H, W, C) input, got " + shape_to_string(in));
  if (p == Padding::same) return {in[0], in[1], filters};
  if (in[0] < 3 || in[1] < 3) throw ShapeError("Conv2D valid padding needs H, W >= 3, got " + shape_to_string(in));
  return {in[0] - 2, in[1] - 2, filters};
}

class Conv2DLayer final : public Layer {
 public:
  Conv2DLayer(const Shape& in, std::size_t filters, Padding padding, Activation act)
      : padding_(padding), act_(act) {
    in_shape_ = in;
    out_shape_ = conv_output_shape(in, filters, padding);
    weights_.name = "kernel";
    weights_.value = Tensor({3, 3, in[2], filters});
    bias_.name = "bias";
    bias_.value = Tensor({filters});
    for (Param* p : {&weights_, &bias_}) {
      p->grad = Tensor(p->value.shape);
      p->accum = Tensor(p->value.shape);
    }
  }

  LayerSpec spec() const override { return LayerSpec::conv2d(out_shape_[2], padding_, act_); }
  std::string type_name() const override { return "Conv2D"; }

  Tensor infer(const Tensor& x) const override {
    expect_sample_shape(x, in_shape_, name_);
    Tensor y = conv2d_forward(x, weights_.value, bias_.value, padding_);
    apply_activation(y, act_);
    return y;
  }

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    input_ = x;
    output_ = infer(x);
    return output_;
  }

  void kink_pattern(std::vector<std::size_t>& out) const override {
    if (act_ != Activation::relu) return;
    for (double v : output_.data) out.push_back(v > 0.0);
  }

  Tensor backward(const Tensor& grad_out) override {
    if (grad_out.shape != output_.shape) throw StateError(name_ + ": gradient shape does not match cache");
    Tensor g = grad_out;
    activation_backward(g, output_, act_);
    const std::size_t n = input_.dim(0), h = input_.dim(1), w = input_.dim(2), ci = input_.dim(3);
    const std::size_t ho = g.dim(1), wo = g.dim(2), co = g.dim(3);
    const std::size_t pad = padding_ == Padding::same ? 1 : 0;
    Tensor gin(input_.shape);
    std::fill(weights_.grad.data.begin(), weights_.grad.data.end(), 0.0);
    std::fill(bias_.grad.data.begin(), bias_.grad.data.end(), 0.0);
    const double* in = input_.data.data();
    const double* wt = weights_.value.data.data();
    double* gi = gin.data.data();
    double* gw = weights_.grad.data.data();
    double* gb = bias_.grad.data.data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double* gp = g.data.data() + ((b * ho + oy) * wo + ox) * co;
          for (std::size_t f = 0; f < co; ++f) gb[f] += gp[f];
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t off = ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * ci;
              const double* ip = in + off;
              double* gip = gi + off;
              const double* wp = wt + (ky * 3 + kx) * ci * co;
              double* gwp = gw + (ky * 3 + kx) * ci * co;
              for (std::size_t c = 0; c < ci; ++c) {
                const double v = ip[c];
                const double* wr = wp + c * co;
                double* gwr = gwp + c * co;
                double acc = 0.0;
                for (std::size_t f = 0; f < co; ++f) {
                  gwr[f] += v * gp[f];
                  acc += wr[f] * gp[f];
                }
                gip[c] += acc;
              }
            }
          }
        }
      }
    }
    return gin;
  }

  std::vector<Param*> params() override { return {&weights_, &bias_}; }

 private:
  Padding padding_;
  Activation act_;
  Param weights_, bias_;
  Tensor input_, output_;
};

class MaxPoolLayer final : public Layer {
 public:
  explicit MaxPoolLayer(const Shape& in) {
    if (in.size() != 3) throw ShapeError("MaxPooling2D needs (H, W, C) input, got " + shape_to_string(in));
    if (in[0] < 2 || in[1] < 2) throw ShapeError("MaxPooling2D needs H, W >= 2, got " + shape_to_string(in));
    in_shape_ = in;
    out_shape_ = {in[0] / 2, in[1] / 2, in[2]};
  }
  LayerSpec spec() const override { return LayerSpec::maxpool2d(); }
  std::string type_name() const override { return "MaxPooling2D"; }

  Tensor infer(const Tensor& x) const override {
    expect_sample_shape(x, in_shape_, name_);
    return maxpool2d_forward(x).output;
  }

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    expect_sample_shape(x, in_shape_, name_);
    auto r = maxpool2d_forward(x);
    input_shape_cache_ = x.shape;
    argmax_ = std::move(r.argmax);
    out_cache_shape_ = r.output.shape;
    return std::move(r.output);
  }

  Tensor backward(const Tensor& grad_out) override {
    if (grad_out.shape != out_cache_shape_) throw StateError(name_ + ": gradient shape does not match cache");
    Tensor gin(input_shape_cache_);
    for (std::size_t i = 0; i < grad_out.size(); ++i) gin.data[argmax_[i]] += grad_out.data[i];
    return gin;
  }

  void kink_pattern(std::vector<std::size_t>& out) const override {
    out.insert(out.end(), argmax_.begin(), argmax_.end());
  }

 private:
  Shape input_shape_cache_, out_cache_shape_;
  std::vector<std::size_t> argmax_;
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(const Shape& in, double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
    in_shape_ = in;
    out_shape_ = in;
  }
  LayerSpec spec() const override { return LayerSpec::dropout(rate_); }
  std::string type_name() const override { return "Dropout"; }

  Tensor infer(const Tensor& x) const override { return x; }

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override {
    mask_.clear();
    shape_ = x.shape;
    if (mode == Mode::infer || rate_ == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.size());
    Tensor y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng.uniform01() < rate_ ? 0.0 : keep_scale;
      y.data[i] *= mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (grad_out.shape != shape_) throw StateError(name_ + ": gradient shape does not match cache");
    if (mask_.empty()) return grad_out;
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mask_[i];
    return g;
  }

 private:
  double rate_;
  Shape shape_;
  std::vector<double> mask_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(const Shape& in) {
    in_shape_ = in;
    out_shape_ = {shape_size(in)};
  }
  LayerSpec spec() const override { return LayerSpec::flatten(); }
  std::string type_name() const override { return "Flatten"; }
  Tensor infer(const Tensor& x) const override {
    expect_sample_shape(x, in_shape_, name_);
    Tensor y = x;
    y.shape = batched(x.dim(0), out_shape_);
    return y;
  }
  Tensor forward(const Tensor& x, Mode, Rng&) override {
    batch_ = x.dim(0);
    return infer(x);
  }
  Tensor backward(const Tensor& grad_out) override {
    Tensor g = grad_out;
    g.shape = batched(batch_, in_shape_);
    if (g.size() != shape_size(g.shape)) throw StateError(name_ + ": gradient shape does not match cache");
    return g;
  }

 private:
  std::size_t batch_ = 0;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(const Shape& in, std::size_t units, Activation act) : act_(act) {
    if (in.size() != 1) throw ShapeError("Dense needs a flat input, got " + shape_to_string(in));
    if (units == 0) throw ShapeError("Dense needs at least one unit");
    in_shape_ = in;
    out_shape_ = {units};
    weights_.name = "kernel";
    weights_.value = Tensor({in[0], units});
    bias_.name = "bias";
    bias_.value = Tensor({units});
    for (Param* p : {&weights_, &bias_}) {
      p->grad = Tensor(p->value.shape);
      p->accum = Tensor(p->value.shape);
    }
  }
  LayerSpec spec() const override { return LayerSpec::dense(out_shape_[0], act_); }
  std::string type_name() const override { return "Dense"; }
  Activation activation() const { return act_; }

  Tensor infer(const Tensor& x) const override {
    expect_sample_shape(x, in_shape_, name_);
    Tensor y = dense_forward(x, weights_.value, bias_.value);
    apply_activation(y, act_);
    return y;
  }

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    input_ = x;
    output_ = infer(x);
    return output_;
  }

  void kink_pattern(std::vector<std::size_t>& out) const override {
    if (act_ != Activation::relu) return;
    for (double v : output_.data) out.push_back(v > 0.0);
  }

  Tensor backward(const Tensor& grad_out) override {
    if (grad_out.shape != output_.shape) throw StateError(name_ + ": gradient shape does not match cache");
    Tensor g = grad_out;
    activation_backward(g, output_, act_);
    return backward_preactivation(g);
  }

  /// dL/dz supplied directly (the fused softmax + cross-entropy path).
  Tensor backward_preactivation(const Tensor& gz) {
    if (gz.shape != output_.shape) throw StateError(name_ + ": gradient shape does not match cache");
    const std::size_t n = input_.dim(0), in = in_shape_[0], units = out_shape_[0];
    std::fill(weights_.grad.data.begin(), weights_.grad.data.end(), 0.0);
    std::fill(bias_.grad.data.begin(), bias_.grad.data.end(), 0.0);
    Tensor gin(input_.shape);
    const double* w = weights_.value.data.data();
    double* gw = weights_.grad.data.data();
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input_.data.data() + b * in;
      const double* g = gz.data.data() + b * units;
      double* gx = gin.data.data() + b * in;
      for (std::size_t u = 0; u < units; ++u) bias_.grad.data[u] += g[u];
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* wr = w + i * units;
        double* gwr = gw + i * units;
        double acc = 0.0;
        for (std::size_t u = 0; u < units; ++u) {
          gwr[u] += xi * g[u];
          acc += wr[u] * g[u];
        }
        gx[i] = acc;
      }
    }
    return gin;
  }

  std::vector<Param*> params() override { return {&weights_, &bias_}; }

 private:
  Activation act_;
  Param weights_, bias_;
  Tensor input_, output_;
};

}  // namespace

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::size_t Layer::param_count() {
  std::size_t n = 0;
  for (Param* p : params()) n += p->value.size();
  return n;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape) {
  switch (spec.kind) {
    case LayerKind::conv2d:
      return std::make_unique<Conv2DLayer>(input_shape, spec.units, spec.padding, spec.activation);
    case LayerKind::maxpool2d:
      return std::make_unique<MaxPoolLayer>(input_shape);
    case LayerKind::dropout:
      return std::make_unique<DropoutLayer>(input_shape, spec.rate);
    case LayerKind::flatten:
      return std::make_unique<FlattenLayer>(input_shape);
    case LayerKind::dense:
      return std::make_unique<DenseLayer>(input_shape, spec.units, spec.activation);
  }
  throw ConfigError("unknown layer kind");
}

void init_glorot(Layer& layer, Rng& rng) {
  for (Param* p : layer.params()) {
    if (p->name == "bias") {
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
      continue;
    }
    const Shape& s = p->value.shape;
    // Dense (in, out); conv (3, 3, in, out) with the receptive field folded in.
    const std::size_t receptive = s.size() == 4 ? s[0] * s[1] : 1;
    const double fan_in = static_cast<double>(s[s.size() - 2] * receptive);
    const double fan_out = static_cast<double>(s[s.size() - 1] * receptive);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : p->value.data) v = rng.uniform(-limit, limit);
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding) {
  if (input.shape.size() != 4) throw ShapeError("conv2d_forward: input must be (N, H, W, C)");
  if (weights.shape.size() != 4 || weights.dim(0) != 3 || weights.dim(1) != 3) {
    throw ShapeError("conv2d_forward: weights must be (3, 3, Cin, Cout)");
  }
  if (weights.dim(2) != input.dim(3)) {
    throw ShapeError("conv2d_forward: input has " + std::to_string(input.dim(3)) + " channels, kernel expects " +
                     std::to_string(weights.dim(2)));
  }
  if (bias.size() != weights.dim(3)) throw ShapeError("conv2d_forward: bias length mismatch");
  const Shape out_sample = conv_output_shape({input.dim(1), input.dim(2), input.dim(3)}, weights.dim(3), padding);
  Tensor out(batched(input.dim(0), out_sample));
  const std::size_t co = weights.dim(3);
  for (std::size_t i = 0; i < out.size(); i += co) {
    std::copy(bias.data.begin(), bias.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i));
  }
  conv_accumulate(input, weights, out, padding == Padding::same ? 1 : 0);
  return out;
}

PoolResult maxpool2d_forward(const Tensor& input) {
  if (input.shape.size() != 4) throw ShapeError("maxpool2d_forward: input must be (N, H, W, C)");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2d_forward: need H, W >= 2");
  const std::size_t ho = h / 2, wo = w / 2;
  PoolResult r;
  r.output = Tensor({n, ho, wo, c});
  r.argmax.resize(r.output.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
              if (input.data[idx] > input.data[best]) best = idx;
            }
          }
          const std::size_t o = ((b * ho + oy) * wo + ox) * c + ch;
          r.output.data[o] = input.data[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.shape.size() != 2) throw ShapeError("dense_forward: input must be (N, D)");
  if (weights.shape.size() != 2 || weights.dim(0) != input.dim(1)) {
    throw ShapeError("dense_forward: weights must be (" + std::to_string(input.dim(1)) + ", units)");
  }
  const std::size_t n = input.dim(0), in = input.dim(1), units = weights.dim(1);
  if (bias.size() != units) throw ShapeError("dense_forward: bias length mismatch");
  Tensor out({n, units});
  for (std::size_t b = 0; b < n; ++b) {
    double* o = out.data.data() + b * units;
    std::copy(bias.data.begin(), bias.data.end(), o);
    const double* x = input.data.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[i];
      const double* wr = weights.data.data() + i * units;
      for (std::size_t u = 0; u < units; ++u) o[u] += xi * wr[u];
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  apply_relu(y);
  return y;
}

Tensor softmax(const Tensor& logits) {
  if (logits.shape.empty()) throw ShapeError("softmax: empty shape");
  Tensor y = logits;
  softmax_rows(y);
  return y;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (x.shape.empty()) throw ShapeError("dropout: empty shape");
  DropoutLayer layer(sample_shape(x), rate);
  return layer.forward(x, mode, rng);
}

double cross_entropy_loss(const Tensor& probs, std::span<const int> labels) {
  if (probs.shape.size() != 2) throw ShapeError("cross_entropy_loss: probs must be (N, K)");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy_loss: label count mismatch");
  if (n == 0) throw DataError("cross_entropy_loss: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw DataError("cross_entropy_loss: label " + std::to_string(labels[b]) + " out of range");
    }
    total += -std::log(std::max(probs.data[b * k + static_cast<std::size_t>(labels[b])], kProbFloor));
  }
  return total / static_cast<double>(n);
}

CnnModel::CnnModel(Shape input_shape, std::uint64_t init_seed)
    : input_shape_(std::move(input_shape)), init_seed_(init_seed), init_rng_(init_seed) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ShapeError("model input shape is empty");
}

void CnnModel::add(const LayerSpec& spec) {
  const Shape in = layers_.empty() ? input_shape_ : layers_.back()->output_shape();
  auto layer = make_layer(spec, in);
  std::string base;
  switch (spec.kind) {
    case LayerKind::conv2d: base = "conv2d"; break;
    case LayerKind::maxpool2d: base = "max_pooling2d"; break;
    case LayerKind::dropout: base = "dropout"; break;
    case LayerKind::flatten: base = "flatten"; break;
    case LayerKind::dense: base = "dense"; break;
  }
  std::size_t same_kind = 0;
  for (const auto& l : layers_) same_kind += l->spec().kind == spec.kind;
  layer->set_name(same_kind == 0 ? base : base + "_" + std::to_string(same_kind));
  init_glorot(*layer, init_rng_);
  layers_.push_back(std::move(layer));
  cache_valid_ = false;
}

Shape CnnModel::output_shape() const { return layers_.empty() ? input_shape_ : layers_.back()->output_shape(); }

std::size_t CnnModel::num_classes() const { return shape_size(output_shape()); }

std::vector<LayerSpec> CnnModel::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

Tensor CnnModel::forward(const Tensor& x, Mode mode, Rng& rng) {
  expect_sample_shape(x, input_shape_, "model input");
  Tensor a = x;
  for (auto& l : layers_) a = l->forward(a, mode, rng);
  last_output_ = a;
  cache_valid_ = true;
  return a;
}

std::vector<std::size_t> CnnModel::kink_pattern() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers_) l->kink_pattern(out);
  return out;
}

Tensor CnnModel::predict(const Tensor& x) const {
  expect_sample_shape(x, input_shape_, "model input");
  Tensor a = x;
  for (const auto& l : layers_) a = l->infer(a);
  return a;
}

double CnnModel::backward(std::span<const int> labels) {
  if (!cache_valid_) throw StateError("backward called without a fresh forward pass");
  if (layers_.empty()) throw StateError("backward on an empty model");
  const Tensor& probs = last_output_;
  const double loss = cross_entropy_loss(probs, labels);
  const std::size_t n = probs.dim(0), k = probs.dim(1);

  auto* head = dynamic_cast<DenseLayer*>(layers_.back().get());
  Tensor g(probs.shape);
  std::size_t first_generic;
  if (head && head->activation() == Activation::softmax) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<int>(j) == labels[b] ? 1.0 : 0.0;
        g.data[b * k + j] = (probs.data[b * k + j] - onehot) / static_cast<double>(n);
      }
    }
    g = head->backward_preactivation(g);
    first_generic = layers_.size() - 1;
  } else {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t t = static_cast<std::size_t>(labels[b]);
      const double p = probs.data[b * k + t];
      g.data[b * k + t] = p > kProbFloor ? -1.0 / (p * static_cast<double>(n)) : 0.0;
    }
    first_generic = layers_.size();
  }
  for (std::size_t i = first_generic; i-- > 0;) g = layers_[i]->backward(g);
  cache_valid_ = false;
  return loss;
}

std::vector<Param*> CnnModel::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  return out;
}

std::size_t CnnModel::param_count() {
  std::size_t n = 0;
  for (auto& l : layers_) n += l->param_count();
  return n;
}

std::vector<LayerAudit> CnnModel::audit() {
  std::vector<LayerAudit> out;
  for (auto& l : layers_) out.push_back({l->name(), l->type_name(), l->output_shape(), l->param_count()});
  return out;
}

std::string CnnModel::summary() {
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  os << pad("Layer (type)", 32) << pad("Output Shape", 24) << "Param #\n";
  for (const auto& a : audit()) {
    std::string shape = "(None";
    for (auto d : a.output_shape) shape += ", " + std::to_string(d);
    shape += ")";
    os << pad(a.name + " (" + a.type + ")", 32) << pad(shape, 24) << a.params << "\n";
  }
  const auto total = param_count();
  os << "Trainable params: " << total << "\n";
  os << "Non-trainable params: 0\n";
  os << "Total params: " << total << "\n";
  return os.str();
}

CnnModel build_paper_cnn(const PaperCnnOptions& o) {
  CnnModel m({o.n_mfcc, o.n_frames, 1}, o.seed);
  m.add(LayerSpec::conv2d(o.filters_block1, Padding::same));
  m.add(LayerSpec::conv2d(o.filters_block1, Padding::valid));
  m.add(LayerSpec::maxpool2d());
  m.add(LayerSpec::dropout(o.dropout1));
  m.add(LayerSpec::conv2d(o.filters_block2, Padding::same));
  m.add(LayerSpec::conv2d(o.filters_block2, Padding::valid));
  m.add(LayerSpec::maxpool2d());
  m.add(LayerSpec::dropout(o.dropout2));
  m.add(LayerSpec::flatten());
  m.add(LayerSpec::dense(o.dense_units, Activation::relu));
  m.add(LayerSpec::dropout(o.dropout3));
  m.add(LayerSpec::dense(o.n_classes, Activation::softmax));
  return m;
}

void rmsprop_step(std::span<Param* const> params, const TrainConfig& cfg, std::uint64_t t) {
  const double lr_t = cfg.lr / (1.0 + cfg.decay * static_cast<double>(t));
  for (Param* p : params) {
    if (p->grad.size() != p->value.size() || p->accum.size() != p->value.size()) {
      throw ShapeError("rmsprop_step: shape mismatch for " + p->name);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i];
      double& acc = p->accum.data[i];
      acc = cfg.rho * acc + (1.0 - cfg.rho) * g * g;
      p->value.data[i] -= lr_t * g / (std::sqrt(acc) + cfg.epsilon);
    }
  }
}

namespace {

Tensor gather(const Dataset& d, std::span<const std::size_t> idx) {
  const std::size_t stride = d.inputs.stride0();
  Tensor out(batched(idx.size(), sample_shape(d.inputs)));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.inputs.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride), stride,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

void check_dataset(const Dataset& d, const CnnModel& m, const char* what) {
  if (d.size() == 0) throw ConfigError(std::string(what) + " split is empty");
  if (d.inputs.shape.empty() || d.inputs.dim(0) != d.size()) {
    throw ShapeError(std::string(what) + " inputs and labels disagree in length");
  }
  expect_sample_shape(d.inputs, m.input_shape(), what);
}

}  // namespace

Evaluation evaluate(const CnnModel& model, const Dataset& data, std::size_t batch_size) {
  check_dataset(data, model, "evaluation");
  const std::size_t n = data.size();
  const std::size_t k = model.num_classes();
  Evaluation ev;
  ev.probs = Tensor({n, k});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor p = model.predict(gather(data, idx));
    std::copy(p.data.begin(), p.data.end(), ev.probs.data.begin() + static_cast<std::ptrdiff_t>(start * k));
  }
  ev.loss = cross_entropy_loss(ev.probs, data.labels);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = ev.probs.data.data() + b * k;
    const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
    correct += pred == data.labels[b];
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return ev;
}

TrainResult train(CnnModel& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  check_dataset(train_set, model, "training");
  if (val_set && val_set->size() > 0) check_dataset(*val_set, model, "validation");
  if (!(cfg.lr > 0.0) || !(cfg.rho >= 0.0 && cfg.rho < 1.0) || cfg.batch_size == 0) {
    throw ConfigError("invalid training configuration");
  }
  Rng rng(cfg.seed);
  TrainResult result;
  result.initial_loss = evaluate(model, train_set).loss;

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto params = model.params();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor x = gather(train_set, idx);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_set.labels[idx[i]];
      model.forward(x, Mode::train, rng);
      const double loss = model.backward(y);
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      }
      rmsprop_step(params, cfg, model.iterations());
      model.set_iterations(model.iterations() + 1);
      model.invalidate_cache();
      for (Param* p : params) {
        if (!p->value.all_finite()) {
          throw NumericalError("non-finite parameter at epoch " + std::to_string(epoch));
        }
      }
    }
    EpochStats s;
    s.epoch = epoch;
    const auto tr = evaluate(model, train_set);
    s.train_loss = tr.loss;
    s.train_acc = tr.accuracy;
    if (val_set && val_set->size() > 0) {
      const auto va = evaluate(model, *val_set);
      s.val_loss = va.loss;
      s.val_acc = va.accuracy;
    } else {
      s.val_loss = std::numeric_limits<double>::quiet_NaN();
      s.val_acc = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(s.train_loss)) throw NumericalError("non-finite training loss");
    result.history.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& s : history) {
    out += std::to_string(s.epoch) + "," + csv::format_double(s.train_loss) + "," +
           csv::format_double(s.train_acc) + "," + csv::format_double(s.val_loss) + "," +
           csv::format_double(s.val_acc) + "\n";
  }
  return out;
}

GradCheckReport gradient_check(CnnModel& model, const Tensor& x, std::span<const int> labels, double h,
                               std::uint64_t dropout_seed, Mode mode) {
  std::vector<std::size_t> pattern;
  auto loss_at = [&]() {
    Rng rng(dropout_seed);
    const double loss = cross_entropy_loss(model.forward(x, mode, rng), labels);
    pattern = model.kink_pattern();
    return loss;
  };
  std::vector<std::size_t> base;
  {
    Rng rng(dropout_seed);
    model.forward(x, mode, rng);
    base = model.kink_pattern();
    model.backward(labels);
  }
  GradCheckReport rep;
  for (auto& layer : model.layers()) {
    for (Param* p : layer->params()) {
      const std::vector<double> analytic = p->grad.data;
      GradCheckEntry e;
      e.name = layer->name() + "/" + p->name;
      e.count = p->value.size();
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double orig = p->value.data[i];
        p->value.data[i] = orig + h;
        const double lp = loss_at();
        bool crossed = pattern != base;
        p->value.data[i] = orig - h;
        const double lm = loss_at();
        crossed = crossed || pattern != base;
        p->value.data[i] = orig;
        if (crossed) {
          ++e.skipped;
          continue;
        }
        const double numeric = (lp - lm) / (2.0 * h);
        const double d = analytic[i] - numeric;
        diff2 += d * d;
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
        e.max_abs_diff = std::max(e.max_abs_diff, std::abs(d));
      }
      const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
      e.rel_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
      rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
      rep.checked += e.count - e.skipped;
      rep.skipped += e.skipped;
      rep.tensors.push_back(e);
    }
  }
  model.invalidate_cache();
  return rep;
}

std::vector<std::uint8_t> encode_model(CnnModel& model, bool include_optimizer) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.input_shape().size()));
  for (auto d : model.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u64(model.init_seed());
  w.u64(model.iterations());
  const auto specs = model.specs();
  w.u32(static_cast<std::uint32_t>(specs.size()));
  for (const auto& s : specs) {
    w.u32(static_cast<std::uint32_t>(s.kind));
    w.u32(static_cast<std::uint32_t>(s.units));
    w.u32(static_cast<std::uint32_t>(s.padding));
    w.u32(static_cast<std::uint32_t>(s.activation));
    w.f64(s.rate);
  }
  const auto params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (Param* p : params) {
    w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
    for (auto d : p->value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value.data) w.f32(static_cast<float>(v));
  }
  w.u8(include_optimizer ? 1 : 0);
  if (include_optimizer) {
    for (Param* p : params) {
      for (double v : p->accum.data) w.f32(static_cast<float>(v));
    }
  }
  return w.take();
}

CnnModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 12 || r.raw(8) != kMagic) throw FormatError("not a CNN checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) throw UnsupportedFormatError("unsupported CNN checkpoint version: " + std::to_string(version));
  Shape input(r.u32());
  for (auto& d : input) d = r.u32();
  const auto seed = r.u64();
  const auto iterations = r.u64();
  CnnModel m(input, seed);
  const auto n_layers = r.u32();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    const auto kind = r.u32();
    if (kind > static_cast<std::uint32_t>(LayerKind::dense)) throw FormatError("unknown layer kind in checkpoint");
    s.kind = static_cast<LayerKind>(kind);
    s.units = r.u32();
    s.padding = static_cast<Padding>(r.u32());
    s.activation = static_cast<Activation>(r.u32());
    s.rate = r.f64();
    m.add(s);
  }
  m.set_iterations(iterations);
  auto params = m.params();
  if (r.u32() != params.size()) throw FormatError("checkpoint parameter count does not match its layers");
  for (Param* p : params) {
    Shape s(r.u32());
    for (auto& d : s) d = r.u32();
    if (s != p->value.shape) throw FormatError("checkpoint tensor shape mismatch for " + p->name);
    for (double& v : p->value.data) v = r.f32();
  }
  if (r.u8() == 1) {
    for (Param* p : params) {
      for (double& v : p->accum.data) v = r.f32();
    }
  }
  if (!r.done()) throw FormatError("CNN checkpoint has trailing bytes");
  return m;
}

}  // namespace ser::nn
