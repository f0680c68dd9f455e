#pragma once

// Dataset container ("SLPD"), L-epoch sequence windows and the synthetic
// EEG generator used for desk-scale end-to-end runs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "xmsleep/dsp.hpp"

namespace xmsleep::data {

// AASM stages in label order.
enum class Stage : std::uint8_t { Wake = 0, NREM1 = 1, NREM2 = 2, NREM3 = 3, REM = 4 };
inline constexpr int kNumClasses = 5;
inline constexpr std::size_t kDefaultSequenceLength = 21;

const char* stage_name(int label);

struct EpochRecord {
  std::vector<float> raw;  // kEpochSamples samples at 100 Hz
  int label = 0;
  std::optional<dsp::Spectrogram> spectrogram;  // computed on demand when absent
};

struct Recording {
  std::string id;
  std::vector<EpochRecord> epochs;
};

struct Dataset {
  std::vector<Recording> recordings;
  std::string source;  // generator seed or file name

  std::size_t epoch_count() const;
};

// Raw samples and labels equal bit-for-bit (cached spectrograms are ignored).
bool bitwise_equal(const Dataset& a, const Dataset& b);

// Stage sequence from a sticky first-order Markov chain (p_stay = 0.85, the
// rest split over Wake-N1-N2-N3 and N2-REM neighbours), one synthetic epoch
// per stage. Deterministic per seed.
Dataset generate_synthetic(std::size_t n_recordings, std::size_t epochs_per_recording,
                           std::uint64_t seed);

// Row-stochastic 5x5 transition matrix used by the generator.
std::vector<std::vector<double>> synthetic_transition_matrix();

// One epoch of the given stage (3000 samples, includes N(0, 0.1^2) noise).
std::vector<float> synthesize_epoch(int label, std::mt19937_64& rng);

// SLPD container, little-endian:
//   "SLPD" | u16 version=1 | u32 recordings |
//   per recording: u16 id_len | id bytes | u32 epochs | epochs x (3000 f32 | u8 label)
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// One row per epoch: samples then label. Rows of 3750 values at 125 Hz are
// resampled to 3000 (pass sample_rate = 125). Produces one recording.
Dataset read_csv_epochs(const std::filesystem::path& path, double sample_rate = 100.0);

// Spectrogram sidecar: `bin_path` holds [N,29,129] f32 little-endian,
// `bin_path` + ".json" holds {"n": N, "frames": 29, "bins": 129}.
void write_spectrogram_sidecar(const std::filesystem::path& bin_path,
                               const std::vector<dsp::Spectrogram>& specs);
std::vector<dsp::Spectrogram> read_spectrogram_sidecar(const std::filesystem::path& bin_path);

// Spectrograms of every epoch in dataset order (cached ones reused).
std::vector<dsp::Spectrogram> dataset_spectrograms(const Dataset& ds);

// A contiguous run of L epochs inside one recording.
struct Window {
  std::size_t recording = 0;
  std::size_t start = 0;

  bool operator==(const Window&) const = default;
  auto operator<=>(const Window&) const = default;
};

struct WindowSet {
  std::vector<Window> windows;
  std::vector<std::string> warnings;  // recordings too short for one window
};

// Windows at offsets 0, stride, 2*stride, ... (stride 0 means L, i.e.
// non-overlapping). Recordings shorter than L are skipped with a warning.
WindowSet enumerate_windows(const Dataset& ds, std::size_t length, std::size_t stride = 0);

// Shuffles the windows by rng and cuts them into batches of `batch_size`;
// the final batch may be partial. Throws InputError when no window exists.
std::vector<std::vector<Window>> make_sequence_batches(const Dataset& ds, std::size_t length,
                                                       std::size_t batch_size,
                                                       std::mt19937_64& rng,
                                                       std::size_t stride = 0);

}  // namespace xmsleep::data
