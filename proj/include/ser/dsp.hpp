#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ser/audio_io.hpp"

namespace ser::dsp {

using Complex = std::complex<double>;

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

/// Precomputed bit-reversal and twiddle tables for one radix-2 size.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }
  /// In-place forward DFT: X[k] = sum_n x[n] exp(-2 pi i k n / N).
  void forward(std::span<Complex> data) const;
  /// In-place inverse, including the 1/N scale.
  void inverse(std::span<Complex> data) const;

 private:
  void transform(std::span<Complex> data, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> twiddles_;  // exp(-2 pi i k / N), k < N/2
};

/// Throws DomainError unless the length is a power of two.
std::vector<Complex> fft(std::span<const Complex> signal);
std::vector<Complex> ifft(std::span<const Complex> spectrum);

/// mel(f) = 2595 * log10(1 + f / 700).
double mel_scale(double hz);
double inverse_mel_scale(double mel);

enum class Window { hann };

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

struct Spectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;  // frame_length / 2 + 1
  std::size_t frame_length = 0;
  std::size_t hop_length = 0;
  std::size_t fft_size = 0;  // frame_length rounded up to a power of two
  int sample_rate = 0;
  std::vector<double> magnitudes;  // n_frames x n_bins, row-major

  double at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * n_bins + bin]; }
  std::span<const double> frame(std::size_t f) const {
    return std::span<const double>(magnitudes).subspan(f * n_bins, n_bins);
  }
};

Spectrogram stft(const AudioClip& clip, std::size_t frame_length, std::size_t hop_length,
                 Window window = Window::hann);

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::size_t fft_size = 0;
  int sample_rate = 0;
  double f_min = 0.0;
  double f_max = 0.0;
  std::vector<double> centers_hz;  // n_mels
  std::vector<double> weights;     // n_mels x n_bins, row-major

  std::span<const double> row(std::size_t m) const {
    return std::span<const double>(weights).subspan(m * n_bins, n_bins);
  }
  double bin_hz(std::size_t k) const {
    return static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
  }
};

/// Triangular filters on n_mels + 2 mel-spaced break points. Bin k sits at
/// k * sample_rate / fft_size; fft_size defaults to 2 * (n_bins - 1).
MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_bins, int sample_rate, double f_min,
                             double f_max, std::size_t fft_size = 0);

/// Shared, thread-safe cache keyed on the full filterbank configuration.
std::shared_ptr<const MelFilterbank> cached_mel_filterbank(std::size_t n_mels, std::size_t n_bins,
                                                           int sample_rate, double f_min,
                                                           double f_max, std::size_t fft_size);

/// Orthonormal DCT-II truncated to n_out coefficients.
std::vector<double> dct2(std::span<const double> v, std::size_t n_out);
/// Inverse of the full-length orthonormal DCT-II (a DCT-III).
std::vector<double> idct2(std::span<const double> c);

/// Row-major n_out x n_in orthonormal DCT-II basis.
class DctBasis {
 public:
  DctBasis(std::size_t n_in, std::size_t n_out);
  void apply(std::span<const double> in, std::span<double> out) const;
  std::size_t n_in() const { return n_in_; }
  std::size_t n_out() const { return n_out_; }

 private:
  std::size_t n_in_, n_out_;
  std::vector<double> basis_;
};

/// Natural-log floor added to mel energies before the log.
inline constexpr double kLogFloor = 1e-10;

struct MfccConfig {
  std::size_t n_mfcc = 13;
  std::size_t frame_length = 2048;
  std::size_t hop_length = 512;
  std::size_t n_mels = 26;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects the clip's Nyquist frequency
};

struct MfccMatrix {
  std::size_t n_mfcc = 0;
  std::size_t n_frames = 0;
  std::vector<double> coeffs;  // n_mfcc x n_frames, row-major
  MfccConfig config;

  double at(std::size_t coef, std::size_t frame) const { return coeffs[coef * n_frames + frame]; }
};

MfccMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg);

/// One row per coefficient, one column per frame, shortest round-trip decimals.
std::string to_csv(const MfccMatrix& m);

}  // namespace ser::dsp
