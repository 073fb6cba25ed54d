#pragma once

// Independent reference implementations. Deliberately naive: direct sums in
// long double, explicit loops, no shared code with the library kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace oracle {

using cld = std::complex<long double>;

inline std::vector<cld> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<cld> out(n);
  const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
  for (std::size_t k = 0; k < n; ++k) {
    cld acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const long double ang = -two_pi * static_cast<long double>((k * t) % n) / static_cast<long double>(n);
      acc += cld(x[t].real(), x[t].imag()) * cld(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

/// max_k |a_k - b_k| / max_k |b_k|
inline double rel_error(const std::vector<std::complex<double>>& a, const std::vector<cld>& b) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(cld(a[i].real(), a[i].imag()) - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return static_cast<double>(den > 0 ? num / den : num);
}

inline std::vector<long double> naive_dct2(const std::vector<double>& v, std::size_t n_out) {
  const std::size_t n = v.size();
  std::vector<long double> c(n_out);
  const long double pi = std::numbers::pi_v<long double>;
  for (std::size_t k = 0; k < n_out; ++k) {
    long double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * std::cos(pi * k * (2.0L * i + 1) / (2.0L * n));
    c[k] = s * (k == 0 ? std::sqrt(1.0L / n) : std::sqrt(2.0L / n));
  }
  return c;
}

/// Cross-correlation, NHWC input, (3,3,Cin,Cout) kernel, six nested loops.
inline std::vector<long double> naive_conv(const std::vector<double>& in, std::size_t n, std::size_t h,
                                           std::size_t w, std::size_t ci, const std::vector<double>& k,
                                           std::size_t co, const std::vector<double>& bias, bool same) {
  const long pad = same ? 1 : 0;
  const std::size_t ho = same ? h : h - 2, wo = same ? w : w - 2;
  std::vector<long double> out(n * ho * wo * co);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x)
        for (std::size_t f = 0; f < co; ++f) {
          long double acc = bias[f];
          for (long dy = 0; dy < 3; ++dy)
            for (long dx = 0; dx < 3; ++dx)
              for (std::size_t c = 0; c < ci; ++c) {
                const long iy = static_cast<long>(y) + dy - pad, ix = static_cast<long>(x) + dx - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += static_cast<long double>(in[((b * h + iy) * w + ix) * ci + c]) *
                       k[((dy * 3 + dx) * ci + c) * co + f];
              }
          out[((b * ho + y) * wo + x) * co + f] = acc;
        }
  return out;
}

inline long double population_variance(const std::vector<double>& v) {
  long double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  long double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / v.size();
}

/// Canonical mono PCM16 WAV assembled byte by byte.
inline std::vector<std::uint8_t> hand_wav(const std::vector<std::int16_t>& pcm, std::uint32_t sr,
                                          std::uint16_t channels = 1) {
  std::vector<std::uint8_t> b;
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  auto tag = [&](const char* s) { b.insert(b.end(), s, s + 4); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  tag("RIFF");
  put(36 + data_bytes, 4);
  tag("WAVE");
  tag("fmt ");
  put(16, 4);
  put(1, 2);
  put(channels, 2);
  put(sr, 4);
  put(sr * channels * 2, 4);
  put(channels * 2, 2);
  put(16, 2);
  tag("data");
  put(data_bytes, 4);
  for (auto s : pcm) put(static_cast<std::uint16_t>(s), 2);
  return b;
}

/// Float32 WAV (format tag 3) assembled byte by byte.
inline std::vector<std::uint8_t> hand_wav_float(const std::vector<float>& samples, std::uint32_t sr,
                                                std::uint16_t channels) {
  std::vector<std::uint8_t> b;
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  auto tag = [&](const char* s) { b.insert(b.end(), s, s + 4); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  tag("RIFF");
  put(36 + data_bytes, 4);
  tag("WAVE");
  tag("fmt ");
  put(16, 4);
  put(3, 2);
  put(channels, 2);
  put(sr, 4);
  put(sr * channels * 4, 4);
  put(channels * 4, 2);
  put(32, 2);
  tag("data");
  put(data_bytes, 4);
  for (float f : samples) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put(u, 4);
  }
  return b;
}

// Soft-margin dual of a 4-point problem: max sum(a) - 1/2 a'Qa with
// Q_ij = y_i y_j K_ij, 0 <= a <= C, sum(a_i y_i) = 0.
struct Toy4 {
  std::array<std::array<double, 4>, 4> K{};
  std::array<int, 4> y{};
  double C = 10.0;

  long double objective(const std::array<long double, 4>& a) const {
    long double s = 0, q = 0;
    for (int i = 0; i < 4; ++i) {
      s += a[i];
      for (int j = 0; j < 4; ++j) q += a[i] * a[j] * y[i] * y[j] * K[i][j];
    }
    return s - 0.5L * q;
  }
  // a_4 is fixed by the equality constraint; returns false when it leaves [0, C].
  bool complete(std::array<long double, 4>& a) const {
    a[3] = -y[3] * (a[0] * y[0] + a[1] * y[1] + a[2] * y[2]);
    return a[3] >= -1e-12L && a[3] <= C + 1e-12L;
  }
};

/// Exhaustive grid over (a1, a2, a3) followed by repeated local zooming.
inline double dual_grid_search(const Toy4& p, int coarse = 40, int levels = 12) {
  long double best = -std::numeric_limits<long double>::infinity();
  std::array<long double, 4> best_a{};
  const long double step0 = p.C / coarse;
  for (int i = 0; i <= coarse; ++i)
    for (int j = 0; j <= coarse; ++j)
      for (int k = 0; k <= coarse; ++k) {
        std::array<long double, 4> a{i * step0, j * step0, k * step0, 0};
        if (!p.complete(a)) continue;
        const auto v = p.objective(a);
        if (v > best) {
          best = v;
          best_a = a;
        }
      }
  long double step = step0;
  for (int level = 0; level < levels; ++level) {
    step /= 4;
    const auto center = best_a;
    for (int di = -8; di <= 8; ++di)
      for (int dj = -8; dj <= 8; ++dj)
        for (int dk = -8; dk <= 8; ++dk) {
          std::array<long double, 4> a{center[0] + di * step, center[1] + dj * step, center[2] + dk * step, 0};
          bool ok = true;
          for (int t = 0; t < 3; ++t) ok = ok && a[t] >= 0 && a[t] <= p.C;
          if (!ok || !p.complete(a)) continue;
          const auto v = p.objective(a);
          if (v > best) {
            best = v;
            best_a = a;
          }
        }
  }
  return static_cast<double>(best);
}

/// The documented toy grid: every set of 4 distinct points of {0,1,2}^2 with
/// every labelling that uses both classes, first point fixed to +1.
struct ToyProblem {
  std::array<std::array<double, 2>, 4> x{};
  std::array<int, 4> y{};
};

inline std::vector<ToyProblem> toy_grid() {
  std::vector<std::array<double, 2>> pts;
  for (int a = 0; a <= 2; ++a)
    for (int b = 0; b <= 2; ++b) pts.push_back({double(a), double(b)});
  std::vector<ToyProblem> out;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = i + 1; j < 9; ++j)
      for (std::size_t k = j + 1; k < 9; ++k)
        for (std::size_t l = k + 1; l < 9; ++l)
          for (int mask = 0; mask < 8; ++mask) {
            ToyProblem p;
            p.x = {pts[i], pts[j], pts[k], pts[l]};
            p.y = {1, mask & 1 ? 1 : -1, mask & 2 ? 1 : -1, mask & 4 ? 1 : -1};
            if (mask == 7) continue;  // single class
            out.push_back(p);
          }
  return out;
}

}  // namespace oracle
