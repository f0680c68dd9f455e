#include "xmsleep/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "xmsleep/errors.hpp"

namespace xmsleep::data {

namespace fs = std::filesystem;

const char* stage_name(int label) {
  static const char* names[] = {"Wake", "NREM1", "NREM2", "NREM3", "REM"};
  return label >= 0 && label < kNumClasses ? names[label] : "?";
}

std::size_t Dataset::epoch_count() const {
  std::size_t n = 0;
  for (const auto& r : recordings) n += r.epochs.size();
  return n;
}

bool bitwise_equal(const Dataset& a, const Dataset& b) {
  if (a.recordings.size() != b.recordings.size()) return false;
  for (std::size_t r = 0; r < a.recordings.size(); ++r) {
    const auto& ra = a.recordings[r];
    const auto& rb = b.recordings[r];
    if (ra.id != rb.id || ra.epochs.size() != rb.epochs.size()) return false;
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
      const auto& ea = ra.epochs[e];
      const auto& eb = rb.epochs[e];
      if (ea.label != eb.label || ea.raw.size() != eb.raw.size()) return false;
      if (std::memcmp(ea.raw.data(), eb.raw.data(), ea.raw.size() * sizeof(float)) != 0)
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::vector<std::vector<double>> synthetic_transition_matrix() {
  constexpr double stay = 0.85;
  // Physiological adjacency: Wake-N1, N1-N2, N2-N3, N2-REM.
  const std::vector<std::vector<int>> neighbours = {{1}, {0, 2}, {1, 3, 4}, {2}, {2}};
  std::vector<std::vector<double>> p(kNumClasses, std::vector<double>(kNumClasses, 0.0));
  for (int s = 0; s < kNumClasses; ++s) {
    p[s][s] = stay;
    for (int n : neighbours[s]) p[s][n] = (1.0 - stay) / double(neighbours[s].size());
  }
  return p;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNoiseSigma = 0.1;

void add_sine(std::vector<double>& x, double freq, double amp, double phase) {
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] += amp * std::sin(kTwoPi * freq * double(n) / double(dsp::kSampleRate) + phase);
}

}  // namespace

std::vector<float> synthesize_epoch(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::vector<double> x(dsp::kEpochSamples, 0.0);
  switch (Stage(label)) {
    case Stage::Wake:  // 20-30 Hz band mix, amplitude 1
      for (int i = 0; i < 3; ++i) add_sine(x, uniform(21.0, 29.0), 1.0 / std::sqrt(3.0), phase(rng));
      break;
    case Stage::NREM1:  // 4-7 Hz, amplitude 0.7
      add_sine(x, uniform(4.0, 7.0), 0.7, phase(rng));
      break;
    case Stage::NREM2: {  // 11-15 Hz spindle bursts on a 4-7 Hz carrier
      add_sine(x, uniform(4.0, 7.0), 0.5, phase(rng));
      const int bursts = std::uniform_int_distribution<int>(2, 4)(rng);
      for (int b = 0; b < bursts; ++b) {
        const double freq = uniform(11.0, 15.0);
        const double dur = uniform(1.0, 2.0) * double(dsp::kSampleRate);
        const double start = uniform(0.0, double(dsp::kEpochSamples) - dur);
        const double ph = phase(rng);
        for (std::size_t n = std::size_t(start); n < std::size_t(start + dur); ++n) {
          const double u = (double(n) - start) / dur;
          const double env = 0.5 - 0.5 * std::cos(kTwoPi * u);  // Hann envelope
          x[n] += env * std::sin(kTwoPi * freq * double(n) / double(dsp::kSampleRate) + ph);
        }
      }
      break;
    }
    case Stage::NREM3:  // 0.5-2 Hz slow waves, amplitude 2
      for (int i = 0; i < 2; ++i) add_sine(x, uniform(0.6, 1.9), 2.0 / std::sqrt(2.0), phase(rng));
      break;
    case Stage::REM:  // 4-8 Hz mix: one low-theta and one high-theta component
      add_sine(x, uniform(4.0, 6.0), 0.9 / std::sqrt(2.0), phase(rng));
      add_sine(x, uniform(6.0, 8.0), 0.9 / std::sqrt(2.0), phase(rng));
      break;
    default:
      throw InputError("synthesize_epoch: label " + std::to_string(label) + " out of range");
  }
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  std::vector<float> out(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) out[n] = float(x[n] + noise(rng));
  return out;
}

Dataset generate_synthetic(std::size_t n_recordings, std::size_t epochs_per_recording,
                           std::uint64_t seed) {
  if (n_recordings < 1 || epochs_per_recording < 1) {
    throw InputError("generate_synthetic: sizes must be >= 1");
  }
  std::mt19937_64 rng(seed);
  const auto p = synthetic_transition_matrix();
  Dataset ds;
  ds.source = "synthetic:seed=" + std::to_string(seed);
  for (std::size_t r = 0; r < n_recordings; ++r) {
    Recording rec;
    rec.id = "synth-" + std::to_string(seed) + "-" + std::to_string(r);
    int stage = int(Stage::Wake);
    for (std::size_t e = 0; e < epochs_per_recording; ++e) {
      if (e > 0) {
        std::discrete_distribution<int> next(p[stage].begin(), p[stage].end());
        stage = next(rng);
      }
      rec.epochs.push_back({synthesize_epoch(stage, rng), stage, std::nullopt});
    }
    ds.recordings.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// SLPD container

namespace {

constexpr char kMagic[4] = {'S', 'L', 'P', 'D'};
constexpr std::uint16_t kVersion = 1;

template <typename U>
U to_little(U value) {
  if constexpr (std::endian::native == std::endian::big) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    std::reverse(buf, buf + sizeof(U));
    std::memcpy(&value, buf, sizeof(U));
  }
  return value;
}

template <typename U>
void put(std::string& out, U value) {
  value = to_little(value);
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_little(value);
  }

  std::string_view take(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* field) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("truncated ") + field + " at offset " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

std::string encode_dataset(const Dataset& ds) {
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, std::uint32_t(ds.recordings.size()));
  for (const auto& rec : ds.recordings) {
    if (rec.id.size() > 0xFFFF) throw InputError("recording id longer than 65535 bytes");
    put<std::uint16_t>(out, std::uint16_t(rec.id.size()));
    out += rec.id;
    put<std::uint32_t>(out, std::uint32_t(rec.epochs.size()));
    for (const auto& ep : rec.epochs) {
      if (ep.raw.size() != dsp::kEpochSamples) {
        throw DimensionError("epoch in '" + rec.id + "' has " + std::to_string(ep.raw.size()) +
                             " samples");
      }
      if (ep.label < 0 || ep.label >= kNumClasses) {
        throw InputError("label " + std::to_string(ep.label) + " out of range");
      }
      for (float v : ep.raw) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
      put<std::uint8_t>(out, std::uint8_t(ep.label));
    }
  }
  return out;
}

Dataset decode_dataset(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic at offset 0");
  }
  in.take(4, "magic");
  const std::size_t version_at = in.offset();
  const auto version = in.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " at offset " +
                      std::to_string(version_at));
  }
  const auto n_rec = in.get<std::uint32_t>("recording count");
  Dataset ds;
  ds.recordings.reserve(std::min<std::size_t>(n_rec, 1 << 16));
  for (std::uint32_t r = 0; r < n_rec; ++r) {
    Recording rec;
    const auto id_len = in.get<std::uint16_t>("id length");
    rec.id = std::string(in.take(id_len, "recording id"));
    const auto n_ep = in.get<std::uint32_t>("epoch count");
    for (std::uint32_t e = 0; e < n_ep; ++e) {
      EpochRecord ep;
      ep.raw.resize(dsp::kEpochSamples);
      for (auto& v : ep.raw) v = std::bit_cast<float>(in.get<std::uint32_t>("epoch samples"));
      const std::size_t label_at = in.offset();
      ep.label = in.get<std::uint8_t>("label");
      if (ep.label >= kNumClasses) {
        throw FormatError("label " + std::to_string(ep.label) + " out of range at offset " +
                          std::to_string(label_at));
      }
      rec.epochs.push_back(std::move(ep));
    }
    ds.recordings.push_back(std::move(rec));
  }
  if (!in.at_end()) {
    throw FormatError("trailing bytes at offset " + std::to_string(in.offset()));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& path) { write_bytes(path, encode_dataset(ds)); }

Dataset read_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw StateError("dataset not found: " + path.string());
  Dataset ds = decode_dataset(read_bytes(path));
  ds.source = path.filename().string();
  return ds;
}

Dataset read_csv_epochs(const fs::path& path, double sample_rate) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open " + path.string());
  const bool resample = std::abs(sample_rate - 125.0) < 1e-9;
  if (!resample && std::abs(sample_rate - 100.0) > 1e-9) {
    throw InputError("CSV sample rate must be 100 or 125 Hz");
  }
  const std::size_t expected = resample ? 3750 : dsp::kEpochSamples;
  Recording rec;
  rec.id = path.stem().string();
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("CSV row " + std::to_string(row) + ": not a number '" + cell + "'");
      }
    }
    if (values.size() != expected + 1) {
      throw FormatError("CSV row " + std::to_string(row) + ": expected " +
                        std::to_string(expected + 1) + " values, got " +
                        std::to_string(values.size()));
    }
    const int label = int(values.back());
    if (label < 0 || label >= kNumClasses || double(label) != values.back()) {
      throw FormatError("CSV row " + std::to_string(row) + ": bad label");
    }
    std::vector<float> samples(values.begin(), values.end() - 1);
    if (resample) samples = dsp::resample_125_to_100(samples);
    rec.epochs.push_back({std::move(samples), label, std::nullopt});
  }
  Dataset ds;
  ds.source = path.filename().string();
  ds.recordings.push_back(std::move(rec));
  return ds;
}

void write_spectrogram_sidecar(const fs::path& bin_path, const std::vector<dsp::Spectrogram>& specs) {
  std::string blob;
  blob.reserve(specs.size() * dsp::kFrames * dsp::kBins * 4);
  for (const auto& s : specs)
    for (float v : s.values) put<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(v));
  write_bytes(bin_path, blob);
  nlohmann::json header{{"n", specs.size()}, {"frames", dsp::kFrames}, {"bins", dsp::kBins}};
  write_bytes(fs::path(bin_path.string() + ".json"), header.dump() + "\n");
}

std::vector<dsp::Spectrogram> read_spectrogram_sidecar(const fs::path& bin_path) {
  const fs::path header_path(bin_path.string() + ".json");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_bytes(header_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sidecar header " + header_path.string());
  }
  const auto n = header.at("n").get<std::size_t>();
  if (header.at("frames").get<std::size_t>() != dsp::kFrames ||
      header.at("bins").get<std::size_t>() != dsp::kBins) {
    throw FormatError("sidecar header has unexpected frames/bins");
  }
  const std::string blob = read_bytes(bin_path);
  Reader in(blob);
  std::vector<dsp::Spectrogram> specs(n);
  for (auto& s : specs)
    for (auto& v : s.values) v = std::bit_cast<float>(in.get<std::uint32_t>("spectrogram values"));
  if (!in.at_end()) throw FormatError("trailing bytes at offset " + std::to_string(in.offset()));
  return specs;
}

std::vector<dsp::Spectrogram> dataset_spectrograms(const Dataset& ds) {
  std::vector<dsp::Spectrogram> out;
  out.reserve(ds.epoch_count());
  for (const auto& rec : ds.recordings)
    for (const auto& ep : rec.epochs)
      out.push_back(ep.spectrogram ? *ep.spectrogram : dsp::stft_spectrogram(ep.raw));
  return out;
}

// ---------------------------------------------------------------------------
// Sequence windows

WindowSet enumerate_windows(const Dataset& ds, std::size_t length, std::size_t stride) {
  if (length < 1) throw InputError("sequence length must be >= 1");
  if (stride == 0) stride = length;
  WindowSet set;
  for (std::size_t r = 0; r < ds.recordings.size(); ++r) {
    const std::size_t n = ds.recordings[r].epochs.size();
    if (n < length) {
      set.warnings.push_back("recording '" + ds.recordings[r].id + "' has " + std::to_string(n) +
                             " epochs, fewer than L=" + std::to_string(length) + "; skipped");
      continue;
    }
    for (std::size_t s = 0; s + length <= n; s += stride) set.windows.push_back({r, s});
  }
  return set;
}

std::vector<std::vector<Window>> make_sequence_batches(const Dataset& ds, std::size_t length,
                                                       std::size_t batch_size,
                                                       std::mt19937_64& rng, std::size_t stride) {
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  auto windows = enumerate_windows(ds, length, stride).windows;
  if (windows.empty()) {
    throw InputError("no recording reaches the sequence length " + std::to_string(length));
  }
  std::shuffle(windows.begin(), windows.end(), rng);
  std::vector<std::vector<Window>> batches;
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    batches.emplace_back(windows.begin() + i,
                         windows.begin() + std::min(windows.size(), i + batch_size));
  }
  return batches;
}

}  // namespace xmsleep::data
