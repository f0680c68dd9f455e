#pragma once

// Raw-epoch conditioning: log-magnitude STFT spectrograms, z-scoring, the
// raw/spectrogram augmentation suite and 125 -> 100 Hz resampling.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace xmsleep::dsp {

inline constexpr std::size_t kSampleRate = 100;
inline constexpr std::size_t kEpochSamples = 3000;  // 30 s at 100 Hz
inline constexpr std::size_t kFrameLength = 200;
inline constexpr std::size_t kHop = 100;
inline constexpr std::size_t kFftLength = 256;
inline constexpr std::size_t kFrames = 29;
inline constexpr std::size_t kBins = kFftLength / 2 + 1;  // 129
inline constexpr double kLogFloor = 1e-6;

// [kFrames, kBins] row-major (frame-major), standardized log-magnitude.
struct Spectrogram {
  std::vector<float> values = std::vector<float>(kFrames * kBins, 0.0f);

  float at(std::size_t frame, std::size_t bin) const { return values[frame * kBins + bin]; }
};

// Symmetric Hamming window 0.54 - 0.46 cos(2 pi n / (N - 1)).
std::vector<double> hamming_window(std::size_t length);

// One-sided magnitudes |X_k| of each Hamming-windowed, zero-padded frame,
// before the log. Row-major [kFrames, kBins].
std::vector<double> frame_magnitudes(std::span<const float> epoch);

// Log-magnitude spectrogram, standardized over the whole epoch (mean 0,
// std 1; a constant array maps to zeros).
Spectrogram stft_spectrogram(std::span<const float> epoch);

// (x - mean) / max(std, 1e-8).
std::vector<float> zscore_normalize(std::span<const float> samples);

enum class AugmentKind {
  AmplitudeScale,
  AmplitudeShift,
  GaussianNoise,
  BandStop,
  TimeShift,
  ZeroMask,
  RandomNoise,  // spectrogram only
};

bool is_raw_kind(AugmentKind kind);
std::string to_string(AugmentKind kind);
AugmentKind augment_kind_from_string(const std::string& name);

// Deterministic building blocks; each is the identity at its null parameter.
std::vector<float> amplitude_scale(std::span<const float> x, double factor);
std::vector<float> amplitude_shift(std::span<const float> x, double std_fraction);
std::vector<float> gaussian_noise(std::span<const float> x, double std_fraction,
                                  std::mt19937_64& rng);
// Zeroes every FFT bin whose frequency lies in [low_hz, high_hz].
std::vector<float> band_stop(std::span<const float> x, double low_hz, double high_hz,
                             double sample_rate = double(kSampleRate));
std::vector<float> time_shift(std::span<const float> x, long shift);
std::vector<float> zero_mask(std::span<const float> x, std::size_t start, std::size_t length);

// Draws the parameters of `kind` from rng:
//   AmplitudeScale  x * u,            u ~ U[0.8, 1.2]
//   AmplitudeShift  x + u * std(x),   u ~ U[-0.1, 0.1]
//   GaussianNoise   x + N(0, (0.05 std(x))^2)
//   BandStop        random 2 Hz band inside [0.5, 45] Hz
//   TimeShift       circular roll by U{-300..300}
//   ZeroMask        one segment of U{0..300} samples set to zero
std::vector<float> augment_raw(std::span<const float> epoch, AugmentKind kind,
                               std::mt19937_64& rng);

AugmentKind random_raw_kind(std::mt19937_64& rng);

// Adds N(0, sigma^2) to every cell.
Spectrogram augment_spec(const Spectrogram& spec, std::mt19937_64& rng, double sigma = 0.05);

// Rational 4/5 polyphase resampling with a linear-phase windowed-sinc
// low-pass (group delay compensated). Output length = ceil(4 n / 5).
std::vector<float> resample_125_to_100(std::span<const float> x);

}  // namespace xmsleep::dsp
