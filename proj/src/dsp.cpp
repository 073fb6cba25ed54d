#include "ser/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <tuple>

#include "ser/csv.hpp"
#include "ser/error.hpp"

namespace ser::dsp {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (!is_power_of_two(n)) {
    throw DomainError("FFT length " + std::to_string(n) + " is not a power of two");
  }
  bitrev_.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
    bitrev_[i] = r;
  }
  twiddles_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = Complex(std::cos(angle), std::sin(angle));
  }
}

void FftPlan::forward(std::span<Complex> data) const { transform(data, false); }

void FftPlan::inverse(std::span<Complex> data) const {
  transform(data, true);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& x : data) x *= scale;
}

void FftPlan::transform(std::span<Complex> data, bool inverse) const {
  if (data.size() != n_) throw ShapeError("FFT plan size does not match data length");
  for (std::size_t i = 0; i < n_; ++i) {
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  }
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex w = twiddles_[k * stride];
        const double wr = w.real();
        const double wi = inverse ? -w.imag() : w.imag();
        const Complex b = data[start + k + half];
        const Complex t(b.real() * wr - b.imag() * wi, b.real() * wi + b.imag() * wr);
        const Complex a = data[start + k];
        data[start + k] = Complex(a.real() + t.real(), a.imag() + t.imag());
        data[start + k + half] = Complex(a.real() - t.real(), a.imag() - t.imag());
      }
    }
  }
}

std::vector<Complex> fft(std::span<const Complex> signal) {
  FftPlan plan(signal.size());
  std::vector<Complex> out(signal.begin(), signal.end());
  plan.forward(out);
  return out;
}

std::vector<Complex> ifft(std::span<const Complex> spectrum) {
  FftPlan plan(spectrum.size());
  std::vector<Complex> out(spectrum.begin(), spectrum.end());
  plan.inverse(out);
  return out;
}

double mel_scale(double hz) {
  if (!(hz >= 0.0)) throw DomainError("mel_scale: frequency must be >= 0");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double inverse_mel_scale(double mel) {
  if (!(mel >= 0.0)) throw DomainError("inverse_mel_scale: mel value must be >= 0");
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Spectrogram stft(const AudioClip& clip, std::size_t frame_length, std::size_t hop_length,
                 Window window) {
  if (frame_length < 2) throw DomainError("stft: frame_length must be >= 2");
  if (hop_length < 1) throw DomainError("stft: hop_length must be >= 1");
  if (clip.samples.size() < frame_length) {
    throw DomainError("stft: clip of " + std::to_string(clip.samples.size()) +
                      " samples is shorter than one frame of " + std::to_string(frame_length));
  }
  std::vector<double> taper;
  switch (window) {
    case Window::hann:
      taper = hann_window(frame_length);
      break;
  }

  Spectrogram spec;
  spec.frame_length = frame_length;
  spec.hop_length = hop_length;
  spec.fft_size = next_power_of_two(frame_length);
  spec.n_bins = frame_length / 2 + 1;
  spec.sample_rate = clip.sample_rate;
  spec.n_frames = 1 + (clip.samples.size() - frame_length) / hop_length;
  spec.magnitudes.resize(spec.n_frames * spec.n_bins);

  const FftPlan plan(spec.fft_size);
  std::vector<Complex> buf(spec.fft_size);
  for (std::size_t f = 0; f < spec.n_frames; ++f) {
    const double* src = clip.samples.data() + f * hop_length;
    for (std::size_t i = 0; i < frame_length; ++i) buf[i] = Complex(src[i] * taper[i], 0.0);
    std::fill(buf.begin() + static_cast<std::ptrdiff_t>(frame_length), buf.end(), Complex{});
    plan.forward(buf);
    double* dst = spec.magnitudes.data() + f * spec.n_bins;
    for (std::size_t k = 0; k < spec.n_bins; ++k) dst[k] = std::abs(buf[k]);
  }
  return spec;
}

MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_bins, int sample_rate, double f_min,
                             double f_max, std::size_t fft_size) {
  if (n_mels < 1) throw DomainError("mel_filterbank: n_mels must be >= 1");
  if (n_bins < 2) throw DomainError("mel_filterbank: need at least 2 bins");
  if (sample_rate <= 0) throw DomainError("mel_filterbank: sample_rate must be positive");
  if (!(f_min >= 0.0) || !(f_min < f_max)) throw DomainError("mel_filterbank: need 0 <= f_min < f_max");
  if (f_max > sample_rate / 2.0) {
    throw DomainError("mel_filterbank: f_max " + std::to_string(f_max) + " exceeds Nyquist");
  }

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_bins;
  fb.fft_size = fft_size ? fft_size : 2 * (n_bins - 1);
  fb.sample_rate = sample_rate;
  fb.f_min = f_min;
  fb.f_max = f_max;

  const double mel_lo = mel_scale(f_min);
  const double mel_hi = mel_scale(f_max);
  const double step = (mel_hi - mel_lo) / static_cast<double>(n_mels + 1);
  std::vector<double> breaks(n_mels + 2);
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    breaks[i] = inverse_mel_scale(mel_lo + step * static_cast<double>(i));
  }
  breaks.front() = f_min;
  breaks.back() = f_max;

  fb.centers_hz.assign(breaks.begin() + 1, breaks.end() - 1);
  fb.weights.assign(n_mels * n_bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = breaks[m], mid = breaks[m + 1], hi = breaks[m + 2];
    double* row = fb.weights.data() + m * n_bins;
    double peak = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = fb.bin_hz(k);
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      row[k] = w;
      peak = std::max(peak, w);
    }
    if (peak > 0.0) {
      for (std::size_t k = 0; k < n_bins; ++k) row[k] /= peak;
    } else {
      // Band narrower than the bin spacing: collapse onto the nearest bin.
      const double pos = mid * static_cast<double>(fb.fft_size) / sample_rate;
      const auto k = std::min(n_bins - 1, static_cast<std::size_t>(std::llround(pos)));
      row[k] = 1.0;
    }
  }
  return fb;
}

std::shared_ptr<const MelFilterbank> cached_mel_filterbank(std::size_t n_mels, std::size_t n_bins,
                                                           int sample_rate, double f_min,
                                                           double f_max, std::size_t fft_size) {
  using Key = std::tuple<std::size_t, std::size_t, int, double, double, std::size_t>;
  static std::shared_mutex mutex;
  static std::map<Key, std::shared_ptr<const MelFilterbank>> cache;

  const Key key{n_mels, n_bins, sample_rate, f_min, f_max, fft_size};
  {
    std::shared_lock lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto fb = std::make_shared<const MelFilterbank>(
      mel_filterbank(n_mels, n_bins, sample_rate, f_min, f_max, fft_size));
  std::unique_lock lock(mutex);
  return cache.try_emplace(key, std::move(fb)).first->second;
}

DctBasis::DctBasis(std::size_t n_in, std::size_t n_out) : n_in_(n_in), n_out_(n_out) {
  if (n_in == 0) throw DomainError("dct2: empty input");
  if (n_out > n_in) throw DomainError("dct2: n_out exceeds input length");
  basis_.resize(n_out * n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i) {
      basis_[k * n_in + i] =
          s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
  }
}

void DctBasis::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != n_in_ || out.size() != n_out_) throw ShapeError("DctBasis: size mismatch");
  for (std::size_t k = 0; k < n_out_; ++k) {
    const double* b = basis_.data() + k * n_in_;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in_; ++i) acc += b[i] * in[i];
    out[k] = acc;
  }
}

std::vector<double> dct2(std::span<const double> v, std::size_t n_out) {
  DctBasis basis(v.size(), n_out);
  std::vector<double> out(n_out);
  basis.apply(v, out);
  return out;
}

std::vector<double> idct2(std::span<const double> c) {
  const std::size_t n = c.size();
  // The orthonormal basis is orthogonal, so the inverse is its transpose.
  const DctBasis basis(n, n);
  std::vector<double> out(n, 0.0), unit(n, 0.0), column(n);
  for (std::size_t i = 0; i < n; ++i) {
    unit[i] = 1.0;
    basis.apply(unit, column);
    unit[i] = 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += column[k] * c[k];
    out[i] = acc;
  }
  return out;
}

MfccMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  if (cfg.n_mfcc < 1) throw DomainError("mfcc: n_mfcc must be >= 1");
  if (cfg.n_mfcc > cfg.n_mels) throw DomainError("mfcc: n_mfcc exceeds n_mels");
  const Spectrogram spec = stft(clip, cfg.frame_length, cfg.hop_length);
  const double f_max = cfg.f_max > 0.0 ? cfg.f_max : clip.sample_rate / 2.0;
  const auto fb = cached_mel_filterbank(cfg.n_mels, spec.n_bins, clip.sample_rate, cfg.f_min, f_max,
                                        spec.fft_size);
  const DctBasis dct(cfg.n_mels, cfg.n_mfcc);

  MfccMatrix out;
  out.n_mfcc = cfg.n_mfcc;
  out.n_frames = spec.n_frames;
  out.config = cfg;
  out.coeffs.resize(out.n_mfcc * out.n_frames);
  std::vector<double> log_energy(cfg.n_mels), cep(cfg.n_mfcc);
  for (std::size_t f = 0; f < spec.n_frames; ++f) {
    const auto mag = spec.frame(f);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const auto row = fb->row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < spec.n_bins; ++k) e += row[k] * mag[k];
      log_energy[m] = std::log(e + kLogFloor);
    }
    dct.apply(log_energy, cep);
    for (std::size_t c = 0; c < cfg.n_mfcc; ++c) out.coeffs[c * out.n_frames + f] = cep[c];
  }
  return out;
}

std::string to_csv(const MfccMatrix& m) {
  std::string out;
  for (std::size_t c = 0; c < m.n_mfcc; ++c) {
    for (std::size_t f = 0; f < m.n_frames; ++f) {
      if (f) out.push_back(',');
      out += csv::format_double(m.at(c, f));
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace ser::dsp
