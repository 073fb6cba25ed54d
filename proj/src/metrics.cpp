#include "ser/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ser/binary_io.hpp"
#include "ser/csv.hpp"
#include "ser/error.hpp"
#include "ser/nn.hpp"
#include "ser/svm.hpp"

namespace ser {

namespace {

std::string class_name(std::size_t c, std::size_t k) {
  if (k == kNumEmotions) return std::string(kEmotionNames[c]);
  return "class" + std::to_string(c);
}

double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

}  // namespace

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw ShapeError("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  }
  return cm;
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += at(i, i);
  return s;
}

std::size_t ConfusionMatrix::row_sum(std::size_t t) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k; ++p) s += at(t, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t p) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < k; ++t) s += at(t, p);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw DataError("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                    std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int v : {truth[i], predicted[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= classes) {
        throw DataError("confusion_matrix: label " + std::to_string(v) + " out of range");
      }
    }
    ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(cm.k);
  for (std::size_t c = 0; c < cm.k; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    auto& m = out[c];
    m.support = cm.row_sum(c);
    m.precision = safe_div(tp, static_cast<double>(cm.col_sum(c)));
    m.recall = safe_div(tp, static_cast<double>(m.support));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
  }
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  return safe_div(static_cast<double>(cm.trace()), static_cast<double>(cm.total()));
}

double micro_recall(const ConfusionMatrix& cm) {
  std::size_t tp = 0, fn = 0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    tp += cm.at(c, c);
    fn += cm.row_sum(c) - cm.at(c, c);
  }
  return safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
}

int argmax(std::span<const double> row) {
  if (row.empty()) throw ShapeError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return static_cast<int>(best);
}

double top_k_accuracy(const Matrix& scores, std::span<const int> truth, std::size_t k) {
  if (scores.rows != truth.size()) throw DataError("top_k_accuracy: row count does not match labels");
  if (k == 0 || k > scores.cols) throw DomainError("top_k_accuracy: k must be in [1, " + std::to_string(scores.cols) + "]");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    const auto row = scores.row(i);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (t >= scores.cols) throw DataError("top_k_accuracy: label out of range");
    std::size_t rank = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] > row[t] || (row[j] == row[t] && j < t)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::vector<double> roc_auc_ovr(const Matrix& scores, std::span<const int> truth) {
  if (scores.rows != truth.size()) throw DataError("roc_auc_ovr: row count does not match labels");
  std::vector<double> out(scores.cols, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> order(scores.rows);
  for (std::size_t c = 0; c < scores.cols; ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(a, c) < scores(b, c); });
    // Mid-ranks over tie groups, then the Mann-Whitney U statistic.
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j < order.size() && scores(order[j], c) == scores(order[i], c)) ++j;
      const double mid = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t r = i; r < j; ++r) {
        if (static_cast<std::size_t>(truth[order[r]]) == c) {
          pos_rank_sum += mid;
          ++n_pos;
        }
      }
      i = j;
    }
    const std::size_t n_neg = order.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;
    const double np = static_cast<double>(n_pos);
    out[c] = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
  }
  return out;
}

MetricsReport make_report(const Matrix& scores, std::span<const int> truth) {
  if (scores.rows != truth.size()) throw DataError("make_report: row count does not match labels");
  if (truth.empty()) throw DataError("make_report: empty evaluation split");
  std::vector<int> pred(scores.rows);
  for (std::size_t i = 0; i < scores.rows; ++i) pred[i] = argmax(scores.row(i));
  MetricsReport r{confusion_matrix(truth, pred, scores.cols), {}, 0.0, {}, {}, truth.size()};
  r.per_class = precision_recall_f1(r.confusion);
  r.accuracy = accuracy(r.confusion);
  for (std::size_t k = 1; k <= scores.cols; ++k) r.top_k.push_back(top_k_accuracy(scores, truth, k));
  r.roc_auc = roc_auc_ovr(scores, truth);
  return r;
}

MetricsReport evaluate_model(const svm::SvmModel& model, const Matrix& X, std::span<const int> truth) {
  if (X.cols != model.dim) {
    throw ConfigError("feature dimension " + std::to_string(X.cols) + " does not match SVM input dimension " +
                      std::to_string(model.dim));
  }
  Matrix scores(X.rows, kNumEmotions, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < X.rows; ++i) {
    const auto p = svm::predict(model, X.row(i));
    for (std::size_t j = 0; j < model.classes.size(); ++j) {
      scores(i, static_cast<std::size_t>(model.classes[j])) = p.decision[j];
    }
  }
  return make_report(scores, truth);
}

MetricsReport evaluate_model(const nn::CnnModel& model, const nn::Dataset& data) {
  if (data.inputs.shape.size() != model.input_shape().size() + 1 ||
      !std::equal(model.input_shape().begin(), model.input_shape().end(), data.inputs.shape.begin() + 1)) {
    throw ConfigError("input shape " + nn::shape_to_string(data.inputs.shape) + " does not match model input " +
                      nn::shape_to_string(model.input_shape()));
  }
  const auto ev = nn::evaluate(model, data);
  Matrix scores(data.size(), model.num_classes());
  scores.data = ev.probs.data;
  return make_report(scores, data.labels);
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "samples: " << n << "\naccuracy: " << accuracy << "\n";
  for (std::size_t k = 0; k < top_k.size(); ++k) os << "top-" << k + 1 << ": " << top_k[k] << "\n";
  os << "class        precision  recall  f1      support  auc\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    std::string name = class_name(c, confusion.k);
    name.resize(12, ' ');
    os << name << " " << per_class[c].precision << "     " << per_class[c].recall << "  " << per_class[c].f1
       << "  " << per_class[c].support << "       " << roc_auc[c] << "\n";
  }
  return os.str();
}

std::string MetricsReport::confusion_csv() const {
  std::vector<std::string> row{"true\\predicted"};
  for (std::size_t c = 0; c < confusion.k; ++c) row.push_back(class_name(c, confusion.k));
  std::string out = csv::format_row(row) + "\n";
  for (std::size_t t = 0; t < confusion.k; ++t) {
    row = {class_name(t, confusion.k)};
    for (std::size_t p = 0; p < confusion.k; ++p) row.push_back(std::to_string(confusion.at(t, p)));
    out += csv::format_row(row) + "\n";
  }
  return out;
}

std::string MetricsReport::per_class_csv() const {
  std::string out = "class,precision,recall,f1,support\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    out += csv::format_row({class_name(c, confusion.k), csv::format_double(m.precision),
                            csv::format_double(m.recall), csv::format_double(m.f1), std::to_string(m.support)}) +
           "\n";
  }
  return out;
}

std::string MetricsReport::top_k_csv() const {
  std::string out = "k,accuracy\n";
  for (std::size_t k = 0; k < top_k.size(); ++k) out += std::to_string(k + 1) + "," + csv::format_double(top_k[k]) + "\n";
  return out;
}

std::vector<std::filesystem::path> MetricsReport::write_csv(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out{dir / "confusion.csv", dir / "per_class.csv", dir / "top_k.csv"};
  write_text_file(out[0], confusion_csv());
  write_text_file(out[1], per_class_csv());
  write_text_file(out[2], top_k_csv());
  return out;
}

}  // namespace ser
