#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "xmsleep/dsp.hpp"
#include "xmsleep/tensor.hpp"

namespace xmsleep::testing {

template <typename T = double>
diff::Tensor<T> randn(diff::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<T> v(diff::numel(shape));
  for (auto& x : v) x = T(nd(rng));
  return diff::Tensor<T>(std::move(shape), std::move(v));
}

inline std::vector<float> sine(double hz, double amplitude = 1.0, std::size_t n = dsp::kEpochSamples,
                               double rate = double(dsp::kSampleRate)) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = float(amplitude * std::sin(2.0 * std::numbers::pi * hz * double(i) / rate));
  return x;
}

inline std::vector<float> white_noise(std::mt19937_64& rng, std::size_t n = dsp::kEpochSamples) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> x(n);
  for (auto& v : x) v = nd(rng);
  return x;
}

// Direct O(N^2) DFT magnitudes of a Hamming-windowed 200-sample frame,
// zero-padded to 256; bins 0..128.
inline std::vector<double> naive_frame_magnitudes(const std::vector<float>& epoch,
                                                  std::size_t frame) {
  const std::size_t n_fft = 256, len = 200, start = frame * 100;
  std::vector<double> mags(n_fft / 2 + 1);
  for (std::size_t k = 0; k < mags.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < len; ++n) {
      const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(n) / double(len - 1));
      const double angle = -2.0 * std::numbers::pi * double(k * n) / double(n_fft);
      acc += w * double(epoch[start + n]) * std::polar(1.0, angle);
    }
    mags[k] = std::abs(acc);
  }
  return mags;
}

// Fraction of the (mean-removed) signal energy between lo and hi Hz, by a
// direct DFT over every one-sided bin.
inline double band_energy_fraction(const std::vector<float>& x, double lo, double hi,
                                   double rate = double(dsp::kSampleRate)) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= double(n);
  double total = 0.0, band = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += (double(x[i]) - mean) *
             std::polar(1.0, -2.0 * std::numbers::pi * double((k * i) % n) / double(n));
    const double e = std::norm(acc);
    const double hz = double(k) * rate / double(n);
    total += e;
    if (hz >= lo && hz <= hi) band += e;
  }
  return total > 0.0 ? band / total : 0.0;
}

// Energy of x at bins whose frequency lies in [lo, hi] (direct DFT).
inline double band_energy(const std::vector<float>& x, double lo, double hi,
                          double rate = double(dsp::kSampleRate)) {
  const std::size_t n = x.size();
  double band = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double hz = double(k) * rate / double(n);
    if (hz < lo || hz > hi) continue;
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += double(x[i]) * std::polar(1.0, -2.0 * std::numbers::pi * double((k * i) % n) / double(n));
    band += std::norm(acc);
  }
  return band;
}

}  // namespace xmsleep::testing
