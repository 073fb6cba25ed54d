#include "ser/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <iomanip>
#include <optional>
#include <sstream>
#include <thread>

#include "ser/csv.hpp"
#include "ser/error.hpp"
#include "ser/metrics.hpp"

namespace ser {

namespace {

using Clock = std::chrono::steady_clock;

std::size_t seconds_to_samples(double s, int sr) {
  return static_cast<std::size_t>(std::llround(s * static_cast<double>(sr)));
}

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t cap) : cap_(std::max<std::size_t>(1, cap)) {}

  void push(T v) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return q_.size() < cap_; });
    q_.push_back(std::move(v));
    not_empty_.notify_one();
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

 private:
  std::size_t cap_;
  std::deque<T> q_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

}  // namespace

void StreamConfig::validate() const {
  if (!(hop_seconds > 0.0) || !(window_seconds > 0.0) || hop_seconds > window_seconds) {
    throw ConfigError("stream needs 0 < hop <= window, got hop " + csv::format_double(hop_seconds) + " s, window " +
                      csv::format_double(window_seconds) + " s");
  }
}

StreamEngine::StreamEngine(const Classifier& model, const StreamConfig& cfg, int sample_rate)
    : model_(model), sample_rate_(sample_rate) {
  cfg.validate();
  if (sample_rate <= 0) throw ConfigError("stream sample rate must be positive");
  model.pipeline().validate();
  window_ = seconds_to_samples(cfg.window_seconds, sample_rate);
  hop_ = seconds_to_samples(cfg.hop_seconds, sample_rate);
  if (hop_ == 0 || window_ == 0) throw ConfigError("stream window or hop rounds to zero samples");
  ring_.assign(window_, 0.0);
  next_trigger_ = window_;
}

std::vector<StreamEvent> StreamEngine::push(std::span<const double> chunk) {
  std::vector<StreamEvent> events;
  for (double s : chunk) {
    ring_[head_] = s;
    head_ = (head_ + 1) % window_;
    ++seen_;
    if (seen_ == next_trigger_) {
      events.push_back(classify());
      next_trigger_ += hop_;
    }
  }
  return events;
}

StreamEvent StreamEngine::classify() {
  const auto t0 = Clock::now();
  AudioClip clip;
  clip.sample_rate = sample_rate_;
  clip.samples.resize(window_);
  // head_ points at the oldest sample once the ring is full.
  std::copy(ring_.begin() + static_cast<std::ptrdiff_t>(head_), ring_.end(), clip.samples.begin());
  std::copy(ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(head_),
            clip.samples.begin() + static_cast<std::ptrdiff_t>(window_ - head_));
  const auto window = extract_feature_window(clip, model_.pipeline());
  StreamEvent e;
  e.probs = model_.probabilities(window);
  e.label = argmax(e.probs);
  e.t_end = static_cast<double>(seen_) / sample_rate_;
  e.t_start = static_cast<double>(seen_ - window_) / sample_rate_;
  e.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  return e;
}

std::size_t expected_event_count(std::size_t n_samples, std::size_t window, std::size_t hop) {
  if (hop == 0) throw ConfigError("hop must be positive");
  return n_samples < window ? 0 : (n_samples - window) / hop + 1;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q / 100.0 * static_cast<double>(values.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

StreamSummary run_stream(const AudioClip& clip, std::size_t chunk_size, const Classifier& model,
                         const StreamConfig& cfg, const EventSink& sink) {
  if (chunk_size == 0) throw ConfigError("chunk size must be positive");
  StreamEngine engine(model, cfg, clip.sample_rate);
  BoundedQueue<std::vector<double>> queue(cfg.queue_capacity);
  std::thread producer([&] {
    for (std::size_t i = 0; i < clip.samples.size(); i += chunk_size) {
      const std::size_t end = std::min(clip.samples.size(), i + chunk_size);
      queue.push(std::vector<double>(clip.samples.begin() + static_cast<std::ptrdiff_t>(i),
                                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end)));
    }
    queue.close();
  });

  StreamSummary summary;
  std::vector<double> latencies;
  Clock::duration busy{};
  try {
    while (auto chunk = queue.pop()) {
      const auto t0 = Clock::now();
      auto events = engine.push(*chunk);
      busy += Clock::now() - t0;
      for (const auto& e : events) {
        latencies.push_back(e.latency_ms);
        if (sink) sink(e);
      }
    }
  } catch (...) {
    // Drain so the producer is never left blocked on a full queue.
    while (queue.pop()) {
    }
    producer.join();
    throw;
  }
  producer.join();

  summary.events = latencies.size();
  summary.audio_seconds = static_cast<double>(clip.samples.size()) / clip.sample_rate;
  summary.processing_seconds = std::chrono::duration<double>(busy).count();
  summary.rtf = summary.audio_seconds > 0.0 ? summary.processing_seconds / summary.audio_seconds : 0.0;
  summary.latency_p50_ms = percentile(latencies, 50.0);
  summary.latency_p95_ms = percentile(latencies, 95.0);
  summary.latency_max_ms = latencies.empty() ? 0.0 : *std::max_element(latencies.begin(), latencies.end());
  return summary;
}

std::string StreamSummary::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "events: " << events << "\naudio_seconds: " << audio_seconds << "\nprocessing_seconds: " << processing_seconds
     << "\nrtf: " << std::setprecision(6) << rtf << std::setprecision(3) << "\nlatency_p50_ms: " << latency_p50_ms
     << "\nlatency_p95_ms: " << latency_p95_ms << "\nlatency_max_ms: " << latency_max_ms << "\n";
  return os.str();
}

std::string stream_csv_header() {
  std::string h = "t_start,t_end";
  for (std::size_t i = 0; i < kNumEmotions; ++i) h += ",p" + std::to_string(i);
  return h + ",label,latency_ms";
}

std::string format_event(const StreamEvent& e, EmitFormat format) {
  if (format == EmitFormat::csv) {
    csv::Row row{csv::format_double(e.t_start), csv::format_double(e.t_end)};
    for (double p : e.probs) row.push_back(csv::format_double(p));
    row.push_back(std::string(kEmotionNames[static_cast<std::size_t>(e.label)]));
    row.push_back(csv::format_double(e.latency_ms));
    return csv::format_row(row);
  }
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "[" << e.t_start << "s - " << e.t_end << "s] " << kEmotionNames[static_cast<std::size_t>(e.label)] << " ("
     << e.probs[static_cast<std::size_t>(e.label)] << ")  " << e.latency_ms << " ms";
  return os.str();
}

}  // namespace ser
