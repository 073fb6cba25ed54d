#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ser/audio_io.hpp"
#include "ser/model_io.hpp"

namespace ser {

enum class EmitFormat { text, csv };

struct StreamConfig {
  double window_seconds = 3.0;
  double hop_seconds = 0.5;
  EmitFormat emit = EmitFormat::text;
  /// Chunks the producer may queue ahead of inference.
  std::size_t queue_capacity = 16;

  /// ConfigError unless 0 < hop <= window.
  void validate() const;
};

struct StreamEvent {
  double t_start = 0.0;
  double t_end = 0.0;
  ClassScores probs{};
  int label = 0;
  double latency_ms = 0.0;
};

/// Sliding-window inference. An event fires each time the number of samples
/// seen reaches window + k * hop, on exactly the last `window` samples, so
/// the event sequence does not depend on how the audio is chunked.
class StreamEngine {
 public:
  StreamEngine(const Classifier& model, const StreamConfig& cfg, int sample_rate);

  std::vector<StreamEvent> push(std::span<const double> chunk);

  std::size_t window_samples() const { return window_; }
  std::size_t hop_samples() const { return hop_; }
  std::size_t samples_seen() const { return seen_; }

 private:
  StreamEvent classify();

  const Classifier& model_;
  int sample_rate_;
  std::size_t window_;
  std::size_t hop_;
  std::vector<double> ring_;
  std::size_t head_ = 0;  // next write position
  std::size_t seen_ = 0;
  std::size_t next_trigger_;
};

/// Events expected for n samples: floor((n - W) / H) + 1, or 0 when n < W.
std::size_t expected_event_count(std::size_t n_samples, std::size_t window, std::size_t hop);

struct StreamSummary {
  std::size_t events = 0;
  double audio_seconds = 0.0;
  double processing_seconds = 0.0;
  double rtf = 0.0;
  double latency_p50_ms = 0.0;
  double latency_p95_ms = 0.0;
  double latency_max_ms = 0.0;

  std::string to_text() const;
};

using EventSink = std::function<void(const StreamEvent&)>;

/// One producer thread feeds chunk_size-sample chunks of clip through a
/// bounded queue; the calling thread runs inference and hands events to sink
/// in timestamp order.
StreamSummary run_stream(const AudioClip& clip, std::size_t chunk_size, const Classifier& model,
                         const StreamConfig& cfg, const EventSink& sink);

/// Nearest-rank percentile of unsorted values; q in [0, 100].
double percentile(std::vector<double> values, double q);

std::string stream_csv_header();
std::string format_event(const StreamEvent& e, EmitFormat format);

}  // namespace ser
