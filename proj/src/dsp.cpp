#include "xmsleep/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>

#include "xmsleep/errors.hpp"

namespace xmsleep::dsp {

namespace {

// FFTW's planner is not thread-safe; plans are created once per length and
// thread, under a process-wide lock.
std::mutex g_planner_mutex;

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::lock_guard lock(g_planner_mutex);
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(int(n), real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(int(n), spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(g_planner_mutex);
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }

  std::vector<std::complex<double>> forward(std::span<const double> in) {
    std::copy(in.begin(), in.end(), real_);
    std::fill(real_ + in.size(), real_ + n_, 0.0);
    fftw_execute(forward_);
    std::vector<std::complex<double>> out(n_ / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = {spec_[k][0], spec_[k][1]};
    return out;
  }

  // Normalized inverse (divides by n).
  std::vector<double> inverse(const std::vector<std::complex<double>>& in) {
    for (std::size_t k = 0; k < in.size(); ++k) {
      spec_[k][0] = in[k].real();
      spec_[k][1] = in[k].imag();
    }
    fftw_execute(inverse_);
    std::vector<double> out(real_, real_ + n_);
    for (auto& v : out) v /= double(n_);
    return out;
  }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

RealFft& fft_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

void require_epoch(std::span<const float> x, const char* op) {
  if (x.size() != kEpochSamples) {
    throw DimensionError(std::string(op) + ": epoch must have " + std::to_string(kEpochSamples) +
                         " samples, got " + std::to_string(x.size()));
  }
}

// Mean accumulated relative to the first element, so a constant array gives
// its value exactly.
template <typename V>
double centered_mean(std::span<const V> x) {
  const double shift = double(x[0]);
  double acc = 0.0;
  for (V v : x) acc += double(v) - shift;
  return shift + acc / double(x.size());
}

double population_std(std::span<const float> x) {
  if (x.empty()) return 0.0;
  const double mu = centered_mean(x);
  double var = 0.0;
  for (float v : x) var += (v - mu) * (v - mu);
  return std::sqrt(var / double(x.size()));
}

}  // namespace

std::vector<double> hamming_window(std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (length < 2) return w;
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(n) / double(length - 1));
  return w;
}

std::vector<double> frame_magnitudes(std::span<const float> epoch) {
  require_epoch(epoch, "stft_spectrogram");
  static const std::vector<double> window = hamming_window(kFrameLength);
  auto& fft = fft_for(kFftLength);
  std::vector<double> mags(kFrames * kBins);
  std::vector<double> frame(kFrameLength);
  for (std::size_t t = 0; t < kFrames; ++t) {
    for (std::size_t n = 0; n < kFrameLength; ++n)
      frame[n] = double(epoch[t * kHop + n]) * window[n];
    const auto spec = fft.forward(frame);
    for (std::size_t k = 0; k < kBins; ++k) mags[t * kBins + k] = std::abs(spec[k]);
  }
  return mags;
}

Spectrogram stft_spectrogram(std::span<const float> epoch) {
  const auto mags = frame_magnitudes(epoch);
  std::vector<double> logs(mags.size());
  for (std::size_t i = 0; i < mags.size(); ++i) logs[i] = std::log(mags[i] + kLogFloor);
  const double mu = centered_mean(std::span<const double>(logs));
  double var = 0.0;
  for (double v : logs) var += (v - mu) * (v - mu);
  const double sd = std::max(std::sqrt(var / double(logs.size())), 1e-8);
  Spectrogram out;
  for (std::size_t i = 0; i < logs.size(); ++i) out.values[i] = float((logs[i] - mu) / sd);
  return out;
}

std::vector<float> zscore_normalize(std::span<const float> samples) {
  std::vector<float> out(samples.size());
  if (samples.empty()) return out;
  const double mu = centered_mean(samples);
  const double sd = std::max(population_std(samples), 1e-8);
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = float((samples[i] - mu) / sd);
  return out;
}

bool is_raw_kind(AugmentKind kind) { return kind != AugmentKind::RandomNoise; }

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::AmplitudeScale: return "AmplitudeScale";
    case AugmentKind::AmplitudeShift: return "AmplitudeShift";
    case AugmentKind::GaussianNoise: return "GaussianNoise";
    case AugmentKind::BandStop: return "BandStop";
    case AugmentKind::TimeShift: return "TimeShift";
    case AugmentKind::ZeroMask: return "ZeroMask";
    case AugmentKind::RandomNoise: return "RandomNoise";
  }
  return "?";
}

AugmentKind augment_kind_from_string(const std::string& name) {
  for (int k = 0; k <= int(AugmentKind::RandomNoise); ++k) {
    if (to_string(AugmentKind(k)) == name) return AugmentKind(k);
  }
  throw InputError("unknown augmentation kind '" + name + "'");
}

std::vector<float> amplitude_scale(std::span<const float> x, double factor) {
  std::vector<float> out(x.begin(), x.end());
  if (factor == 1.0) return out;
  for (auto& v : out) v = float(v * factor);
  return out;
}

std::vector<float> amplitude_shift(std::span<const float> x, double std_fraction) {
  std::vector<float> out(x.begin(), x.end());
  if (std_fraction == 0.0) return out;
  const double offset = std_fraction * population_std(x);
  for (auto& v : out) v = float(v + offset);
  return out;
}

std::vector<float> gaussian_noise(std::span<const float> x, double std_fraction,
                                  std::mt19937_64& rng) {
  std::vector<float> out(x.begin(), x.end());
  const double sigma = std_fraction * population_std(x);
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out) v = float(v + noise(rng));
  return out;
}

std::vector<float> band_stop(std::span<const float> x, double low_hz, double high_hz,
                             double sample_rate) {
  if (x.empty() || high_hz < low_hz) return {x.begin(), x.end()};
  auto& fft = fft_for(x.size());
  std::vector<double> in(x.begin(), x.end());
  auto spec = fft.forward(in);
  const double bin_hz = sample_rate / double(x.size());
  bool touched = false;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = double(k) * bin_hz;
    if (f >= low_hz && f <= high_hz) {
      spec[k] = 0.0;
      touched = true;
    }
  }
  if (!touched) return {x.begin(), x.end()};
  const auto back = fft.inverse(spec);
  return {back.begin(), back.end()};
}

std::vector<float> time_shift(std::span<const float> x, long shift) {
  std::vector<float> out(x.size());
  const long n = long(x.size());
  if (n == 0) return out;
  for (long i = 0; i < n; ++i) out[std::size_t(((i + shift) % n + n) % n)] = x[std::size_t(i)];
  return out;
}

std::vector<float> zero_mask(std::span<const float> x, std::size_t start, std::size_t length) {
  std::vector<float> out(x.begin(), x.end());
  const std::size_t end = std::min(out.size(), start + length);
  for (std::size_t i = std::min(start, out.size()); i < end; ++i) out[i] = 0.0f;
  return out;
}

std::vector<float> augment_raw(std::span<const float> epoch, AugmentKind kind,
                               std::mt19937_64& rng) {
  if (!is_raw_kind(kind)) {
    throw InputError("augment_raw: " + to_string(kind) + " is a spectrogram augmentation");
  }
  require_epoch(epoch, "augment_raw");
  switch (kind) {
    case AugmentKind::AmplitudeScale:
      return amplitude_scale(epoch, std::uniform_real_distribution<double>(0.8, 1.2)(rng));
    case AugmentKind::AmplitudeShift:
      return amplitude_shift(epoch, std::uniform_real_distribution<double>(-0.1, 0.1)(rng));
    case AugmentKind::GaussianNoise:
      return gaussian_noise(epoch, 0.05, rng);
    case AugmentKind::BandStop: {
      const double low = std::uniform_real_distribution<double>(0.5, 43.0)(rng);
      return band_stop(epoch, low, low + 2.0);
    }
    case AugmentKind::TimeShift:
      return time_shift(epoch, std::uniform_int_distribution<long>(-300, 300)(rng));
    case AugmentKind::ZeroMask: {
      const auto len = std::uniform_int_distribution<std::size_t>(0, 300)(rng);
      const auto start = std::uniform_int_distribution<std::size_t>(0, epoch.size() - len)(rng);
      return zero_mask(epoch, start, len);
    }
    case AugmentKind::RandomNoise:
      break;
  }
  return {epoch.begin(), epoch.end()};
}

AugmentKind random_raw_kind(std::mt19937_64& rng) {
  return AugmentKind(std::uniform_int_distribution<int>(0, int(AugmentKind::ZeroMask))(rng));
}

Spectrogram augment_spec(const Spectrogram& spec, std::mt19937_64& rng, double sigma) {
  Spectrogram out = spec;
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.values) v = float(v + noise(rng));
  return out;
}

std::vector<float> resample_125_to_100(std::span<const float> x) {
  constexpr std::size_t up = 4;
  constexpr std::size_t down = 5;
  constexpr std::size_t taps = 241;  // odd => integer group delay
  static const std::vector<double> h = [] {
    // Low-pass at the output Nyquist (50 Hz) on the 500 Hz upsampled grid,
    // Hamming-windowed sinc with gain `up`.
    std::vector<double> coef(taps);
    const double fc = 0.5 / double(down);  // cycles/sample on the upsampled grid
    const auto w = hamming_window(taps);
    const double mid = double(taps - 1) / 2.0;
    for (std::size_t i = 0; i < taps; ++i) {
      const double t = double(i) - mid;
      const double sinc =
          t == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * t) / (std::numbers::pi * t);
      coef[i] = double(up) * sinc * w[i];
    }
    return coef;
  }();
  const std::size_t n_up = x.size() * up;
  const std::size_t n_out = (n_up + down - 1) / down;
  const std::ptrdiff_t delay = std::ptrdiff_t(taps - 1) / 2;
  std::vector<float> out(n_out);
  for (std::size_t m = 0; m < n_out; ++m) {
    // y[m] = sum_j h[j] * u[m*down + delay - j], u nonzero only on multiples of `up`.
    const std::ptrdiff_t centre = std::ptrdiff_t(m * down) + delay;
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) {
      const std::ptrdiff_t idx = centre - std::ptrdiff_t(j);
      if (idx < 0 || idx % std::ptrdiff_t(up) != 0) continue;
      const std::size_t src = std::size_t(idx) / up;
      if (src >= x.size()) continue;
      acc += h[j] * double(x[src]);
    }
    out[m] = float(acc);
  }
  return out;
}

}  // namespace xmsleep::dsp
