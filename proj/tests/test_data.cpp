#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "support.hpp"
#include "xmsleep/data.hpp"
#include "xmsleep/errors.hpp"

using namespace xmsleep;
using namespace xmsleep::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "xmsleep_data_test";
  fs::create_directories(dir);
  return dir / name;
}

Dataset one_recording(std::size_t epochs, std::uint64_t seed = 1) {
  return generate_synthetic(1, epochs, seed);
}

}  // namespace

TEST_CASE("synthetic generator is deterministic per seed") {
  const auto a = generate_synthetic(2, 30, 7);
  const auto b = generate_synthetic(2, 30, 7);
  const auto c = generate_synthetic(2, 30, 8);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, c));
  CHECK(a.epoch_count() == 60);
  for (const auto& r : a.recordings)
    for (const auto& e : r.epochs) {
      CHECK(e.raw.size() == dsp::kEpochSamples);
      CHECK(e.label >= 0);
      CHECK(e.label < kNumClasses);
    }
  CHECK_THROWS_AS(generate_synthetic(0, 10, 1), InputError);
}

TEST_CASE("synthetic stages carry their characteristic bands") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3; ++i) {
    const auto deep = synthesize_epoch(int(Stage::NREM3), rng);
    CHECK(testing::band_energy_fraction(deep, 0.5, 2.0) > 0.6);
    const auto wake = synthesize_epoch(int(Stage::Wake), rng);
    CHECK(testing::band_energy_fraction(wake, 20.0, 30.0) > 0.6);
  }
  CHECK_THROWS_AS(synthesize_epoch(5, rng), InputError);
}

TEST_CASE("transition matrix is row stochastic and sticky") {
  const auto m = synthetic_transition_matrix();
  REQUIRE(m.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (double p : m[i]) {
      CHECK(p >= 0.0);
      acc += p;
    }
    CHECK(acc == doctest::Approx(1.0));
    CHECK(m[i][i] == doctest::Approx(0.85));
  }
}

TEST_CASE("every stage appears with at least 5 percent frequency") {
  const auto ds = generate_synthetic(10, 1000, 11);
  std::vector<std::size_t> counts(5, 0);
  for (const auto& r : ds.recordings)
    for (const auto& e : r.epochs) counts[std::size_t(e.label)] += 1;
  for (auto c : counts) CHECK(double(c) / double(ds.epoch_count()) >= 0.05);
}

TEST_CASE("SLPD container round trip and corruption") {
  const auto ds = generate_synthetic(2, 5, 2);
  const auto bytes = encode_dataset(ds);
  CHECK(bytes.substr(0, 4) == "SLPD");
  CHECK(bitwise_equal(decode_dataset(bytes), ds));

  const auto path = scratch("rt.slpd");
  write_dataset(ds, path);
  CHECK(bitwise_equal(read_dataset(path), ds));
  CHECK_THROWS_AS(read_dataset(scratch("absent.slpd")), StateError);

  std::string bad = bytes;
  bad[0] = 'X';
  try {
    decode_dataset(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad magic at offset 0") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_dataset(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_dataset(bytes + "x"), FormatError);

  Dataset empty;
  CHECK(decode_dataset(encode_dataset(empty)).recordings.empty());
  Dataset hollow;
  hollow.recordings.push_back({"r0", {}});
  const auto h = decode_dataset(encode_dataset(hollow));
  REQUIRE(h.recordings.size() == 1);
  CHECK(h.recordings[0].epochs.empty());
}

TEST_CASE("window enumeration") {
  Dataset ds;
  ds.recordings.push_back(one_recording(42).recordings[0]);
  CHECK(enumerate_windows(ds, 21).windows.size() == 2);
  const auto overlapping = enumerate_windows(ds, 21, 1);
  CHECK(overlapping.windows.size() == 22);
  CHECK(overlapping.windows.back().start == 21);

  Dataset short_ds = one_recording(20);
  const auto none = enumerate_windows(short_ds, 21);
  CHECK(none.windows.empty());
  CHECK(none.warnings.size() == 1);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(make_sequence_batches(short_ds, 21, 2, rng), InputError);
  CHECK_THROWS_AS(enumerate_windows(ds, 0), InputError);
}

TEST_CASE("sequence batches partition the windows") {
  const auto ds = one_recording(105);
  std::mt19937_64 rng(5);
  const auto batches = make_sequence_batches(ds, 21, 2, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 2);
  CHECK(batches[2].size() == 1);
  std::vector<Window> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  CHECK(flat == enumerate_windows(ds, 21).windows);

  std::mt19937_64 r1(9), r2(9);
  CHECK(make_sequence_batches(ds, 21, 2, r1) == make_sequence_batches(ds, 21, 2, r2));
}

TEST_CASE("CSV epochs at 100 and 125 Hz") {
  const auto path = scratch("epochs.csv");
  {
    std::ofstream out(path);
    out << "# comment\n";
    for (int row = 0; row < 2; ++row) {
      for (std::size_t i = 0; i < 3000; ++i) out << (row + 0.5) << ',';
      out << (row == 0 ? 2 : 4) << '\n';
    }
  }
  const auto ds = read_csv_epochs(path);
  REQUIRE(ds.epoch_count() == 2);
  CHECK(ds.recordings[0].epochs[1].label == 4);
  CHECK(ds.recordings[0].epochs[0].raw[10] == 0.5f);

  const auto path125 = scratch("epochs125.csv");
  {
    std::ofstream out(path125);
    const auto tone = testing::sine(3.0, 1.0, 3750, 125.0);
    for (float v : tone) out << v << ',';
    out << "1\n";
  }
  const auto rs = read_csv_epochs(path125, 125.0);
  CHECK(rs.recordings[0].epochs[0].raw.size() == 3000);
  CHECK_THROWS_AS(read_csv_epochs(path125, 100.0), FormatError);
  CHECK_THROWS_AS(read_csv_epochs(path, 250.0), InputError);
}

TEST_CASE("spectrogram sidecar round trip") {
  const auto ds = generate_synthetic(1, 3, 4);
  const auto specs = dataset_spectrograms(ds);
  REQUIRE(specs.size() == 3);
  const auto path = scratch("specs.bin");
  write_spectrogram_sidecar(path, specs);
  CHECK(fs::exists(fs::path(path.string() + ".json")));
  const auto back = read_spectrogram_sidecar(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i].values == specs[i].values);
  CHECK(specs[0].values == dsp::stft_spectrogram(ds.recordings[0].epochs[0].raw).values);
}
