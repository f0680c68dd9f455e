// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (0 when all pass). Arguments select a subset, e.g.
// `xmsleep_acceptance 1 3 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "support.hpp"
#include "xmsleep/backbones.hpp"
#include "xmsleep/checkpoint.hpp"
#include "xmsleep/data.hpp"
#include "xmsleep/dsp.hpp"
#include "xmsleep/gradcheck.hpp"
#include "xmsleep/model.hpp"
#include "xmsleep/training.hpp"

using namespace xmsleep;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kOpTol = 1e-5;
constexpr double kCompositionTol = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kMagnitudeTol = 1e-5;
constexpr double kSpectrogramSeconds = 10.0;
constexpr double kClosedFormTol = 1e-6;
constexpr double kTrainAccuracy = 0.95;
constexpr double kHeldOutAccuracy = 0.80;
constexpr double kEndToEndSeconds = 15 * 60.0;

struct Verdict {
  bool ok = true;
  std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = clk::now();
  const auto results = diff::run_gradcheck_suite(7);
  const double secs = seconds_since(t0);
  Verdict v;
  double worst_op = 0.0, worst_comp = 0.0;
  std::size_t comps = 0;
  std::string failed;
  for (const auto& r : results) {
    const bool comp = r.name.starts_with("composition.");
    comps += comp;
    const double tol = comp ? kCompositionTol : kOpTol;
    (comp ? worst_comp : worst_op) = std::max(comp ? worst_comp : worst_op, r.max_rel_error);
    if (!(r.max_rel_error <= tol)) failed += " " + r.name;
  }
  v.ok = failed.empty() && comps == 3 && secs < kGradSuiteSeconds;
  v.detail = fmt("%zu checks, worst op %.2e (tol %.0e), worst composition %.2e (tol %.0e), %.1fs",
                 results.size(), worst_op, kOpTol, worst_comp, kCompositionTol, secs);
  if (!failed.empty()) v.detail += "; over tolerance:" + failed;
  return v;
}

Verdict spectrogram_oracle() {
  const auto t0 = clk::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int e = 0; e < 20; ++e) {
    const auto x = testing::white_noise(rng);
    const auto mags = dsp::frame_magnitudes(x);
    for (std::size_t f = 0; f < dsp::kFrames; ++f) {
      const auto ref = testing::naive_frame_magnitudes(x, f);
      for (std::size_t k = 0; k < dsp::kBins; ++k)
        worst = std::max(worst, std::abs(ref[k] - mags[f * dsp::kBins + k]));
    }
  }
  const auto spec = dsp::stft_spectrogram(testing::sine(10.0));
  std::size_t peak_frames = 0;
  for (std::size_t f = 0; f < dsp::kFrames; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < dsp::kBins; ++k)
      if (spec.at(f, k) > spec.at(f, best)) best = k;
    peak_frames += best == 26;
  }
  const double secs = seconds_since(t0);
  return {worst <= kMagnitudeTol && peak_frames == dsp::kFrames && secs < kSpectrogramSeconds,
          fmt("max |DFT - STFT| %.2e over 20 epochs (tol %.0e), 10 Hz peak at bin 26 in %zu/29 frames, %.2fs",
              worst, kMagnitudeTol, peak_frames, secs)};
}

Verdict closed_form_losses() {
  using TD = diff::Tensor<double>;
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (std::size_t b : {2u, 4u, 8u}) {
    const auto v = testing::randn<double>({16}, rng);
    std::vector<double> rows;
    for (std::size_t i = 0; i < b * 21; ++i) rows.insert(rows.end(), v.data().begin(), v.data().end());
    const auto z = diff::l2_normalize(TD({b, 21, 16}, rows));
    worst = std::max(worst, std::abs(nn::info_nce_loss(z, z, 0.1).item() - std::log(double(b))));
  }
  nn::HeadOutputs<double> uniform{TD::zeros({4, 21, 5}), TD::zeros({4, 21, 5}), TD::zeros({4, 21, 5})};
  std::vector<int> labels(84);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = int((i * 7) % 5);
  const double pre = nn::sequence_loss(uniform, labels, nn::kPretrainWeights).item();
  const double fine = nn::sequence_loss(uniform, labels, nn::kFinetuneWeights).item();
  const double e_pre = std::abs(pre - 1.2 * std::log(5.0)), e_fine = std::abs(fine - 3.0 * std::log(5.0));
  return {worst <= kClosedFormTol && e_pre <= kClosedFormTol && e_fine <= kClosedFormTol,
          fmt("InfoNCE vs ln B err %.1e, 1.2 ln5 err %.1e, 3 ln5 err %.1e (tol %.0e)", worst, e_pre, e_fine,
              kClosedFormTol)};
}

Verdict shape_contract() {
  using diff::Shape;
  const auto cfg = ModelConfig::paper();
  diff::ModelParams<float> p(1);
  nn::CnnBackbone<float> cnn(p, "cnn", cfg);
  nn::SpecTransformer<float> spec(p, "spec", cfg);
  nn::EpochAttention<float> pool(p, "pool", cfg.d_model, cfg.attention_size);
  nn::CrossMaskingModel<float> seq(p, "seq", cfg);
  std::mt19937_64 rng(4);
  const std::size_t b = 2;
  nn::ForwardContext ctx;
  const auto tokens = cnn(testing::randn<float>({b, 1, 3000}, rng));
  const auto spec_out = spec(testing::randn<float>({b, 29, 129}, rng), ctx);
  const auto pooled = pool(tokens);
  const auto pooled_sp = pool(spec_out);
  const auto [t_sg, t_sp] = seq.cross_encode(testing::randn<float>({b, 21, 128}, rng),
                                             testing::randn<float>({b, 21, 128}, rng), ctx);
  const bool ok = tokens.shape() == Shape{b, 5, 128} && spec_out.shape() == Shape{b, 29, 128} &&
                  pooled.shape() == Shape{b, 128} && pooled_sp.shape() == Shape{b, 128} &&
                  t_sg.shape() == Shape{b, 21, 128} && t_sp.shape() == Shape{b, 21, 128};
  return {ok, "cnn " + diff::shape_str(tokens.shape()) + ", spectrogram " + diff::shape_str(spec_out.shape()) +
                  ", pool " + diff::shape_str(pooled.shape()) + ", cross " + diff::shape_str(t_sg.shape()) + "/" +
                  diff::shape_str(t_sp.shape())};
}

Verdict masking_invariants() {
  const auto cfg = ModelConfig::desk();
  nn::SleepModel<float> model(cfg, 5);
  std::mt19937_64 rng(6);
  const std::size_t b = 2, len = cfg.seq_len;
  const auto f_sg = testing::randn<float>({b, len, cfg.d_model}, rng);
  const auto f_sp = testing::randn<float>({b, len, cfg.d_model}, rng);
  std::vector<int> labels(b * len);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = int(i % 5);

  nn::ForwardOptions plain;
  nn::ForwardOptions zero = plain;
  for (std::size_t i = 0; i < b; ++i) {
    const auto m = nn::sample_masks(len, 0.0, nn::MaskMode::Independent, rng);
    zero.mask_sg.insert(zero.mask_sg.end(), m.sg.begin(), m.sg.end());
    zero.mask_sp.insert(zero.mask_sp.end(), m.sp.begin(), m.sp.end());
  }
  nn::ForwardContext ctx;
  const auto a = model.forward_features(f_sg, f_sp, labels, plain, ctx);
  const auto z = model.forward_features(f_sg, f_sp, labels, zero, ctx);
  const bool same = a.logits.cat.to_vector() == z.logits.cat.to_vector() &&
                    a.logits.sg.to_vector() == z.logits.sg.to_vector() && a.total.item() == z.total.item();

  const std::vector<std::size_t> counts{nn::mask_count(21, 0.15), nn::mask_count(21, 0.5), nn::mask_count(21, 0.7)};
  bool drawn = true;
  for (double r : {0.15, 0.5, 0.7}) {
    const auto m = nn::sample_masks(21, r, nn::MaskMode::Independent, rng);
    const auto n = nn::mask_count(21, r);
    drawn &= std::size_t(std::count(m.sg.begin(), m.sg.end(), 1)) == n &&
             std::size_t(std::count(m.sp.begin(), m.sp.end(), 1)) == n;
  }

  nn::ForwardOptions masked = plain;
  masked.mask_sg.assign(b * len, 0);
  masked.mask_sp.assign(b * len, 0);
  masked.mask_sg[4] = 1;
  masked.mask_sp[30] = 1;
  model.params.zero_grad();
  model.forward_features(f_sg, f_sp, labels, masked, ctx).total.backward();
  auto norm = [](std::span<const float> g) {
    double s = 0.0;
    for (float v : g) s += double(v) * v;
    return std::sqrt(s);
  };
  const double g_sg = norm(model.seq.mask_sg.grad()), g_sp = norm(model.seq.mask_sp.grad());
  const bool ok = same && counts == std::vector<std::size_t>{3, 11, 15} && drawn && g_sg > 0.0 && g_sp > 0.0;
  return {ok, fmt("ratio-0 forward bitwise equal: %s; counts {%zu,%zu,%zu}; mask-token grad norms %.2e/%.2e",
                  same ? "yes" : "no", counts[0], counts[1], counts[2], g_sg, g_sp)};
}

// Criteria 6 and 7 share one training run.
struct EndToEnd {
  Verdict overfit, freeze;
};

EndToEnd end_to_end() {
  EndToEnd out;
  const auto t0 = clk::now();
  const auto ds = data::generate_synthetic(6, 231, 7);
  const auto held = data::generate_synthetic(2, 231, 1007);

  auto c0 = train::TrainConfig::for_stage(train::StageKind::Stage0);
  c0.seed = 7;
  auto s0 = train::stage0_train(ds, c0);
  const auto split = train::split_windows(ds, c0);

  auto cp = train::TrainConfig::for_stage(train::StageKind::Pretrain);
  cp.seed = 7;
  auto pre = train::pretrain_run(ds, cp, std::move(s0.model));
  const auto dir = fs::temp_directory_path() / "xmsleep_acceptance_pretrain.ckpt";
  fs::remove_all(dir);
  train::save_model(dir, *pre.model, train::StageKind::Pretrain, cp);
  const auto checkpoint_hash = train::load_model(dir)->params.hash(nn::kBackbonePrefixes);
  fs::remove_all(dir);

  auto cf = train::TrainConfig::for_stage(train::StageKind::Finetune);
  cf.seed = 7;
  auto fine = train::finetune_run(ds, cf, std::move(pre.model));
  const double secs = seconds_since(t0);

  const auto train_m = train::evaluate(ds, *fine.model, split.train);
  const auto held_m = train::evaluate(held, *fine.model);
  out.overfit = {train_m.accuracy >= kTrainAccuracy && held_m.accuracy >= kHeldOutAccuracy && secs < kEndToEndSeconds &&
                     split.train.size() == 60,
                 fmt("%zu training sequences; pretrain %zu steps, finetune %zu steps; train acc %.4f (>= %.2f), "
                     "held-out acc %.4f (>= %.2f), macro-F1 %.4f; %.0fs",
                     split.train.size(), pre.steps_run, fine.steps_run, train_m.accuracy, kTrainAccuracy,
                     held_m.accuracy, kHeldOutAccuracy, held_m.macro_f1, secs)};
  const auto after = fine.model->params.hash(nn::kBackbonePrefixes);
  out.freeze = {after == checkpoint_hash,
                fmt("backbone/pool hash %016llx after finetune vs %016llx in the pretrain checkpoint",
                    (unsigned long long)after, (unsigned long long)checkpoint_hash)};
  return out;
}

// Every line after the header has four comma-separated fields: a name and three numbers.
bool well_formed_csv(const std::string& csv, std::size_t rows) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "variant,mask_ratio,accuracy,macro_f1") return false;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4 || cells[0].empty()) return false;
    for (std::size_t i = 1; i < 4; ++i) {
      std::size_t used = 0;
      const double v = std::stod(cells[i], &used);
      if (used != cells[i].size() || !(v >= 0.0 && v <= 1.0)) return false;
    }
    ++n;
  }
  return n == rows;
}

Verdict ablation_harness() {
  const auto t0 = clk::now();
  const auto ds = data::generate_synthetic(3, 84, 8);
  auto base = train::TrainConfig::for_stage(train::StageKind::Pretrain);
  base.seed = 8;
  base.validate_every = 10;
  train::AblationPlan plan;
  plan.mask_sweep = {0.15, 0.5, 0.7};
  plan.stage0_steps = 40;
  plan.pretrain_steps = 30;
  plan.finetune_steps = 20;
  const auto report = train::ablate(ds, nullptr, base, plan);
  std::set<std::string> names;
  for (const auto& r : report.rows) names.insert(r.variant);
  bool all = true;
  for (const auto& v : train::kAblationVariants) all &= names.count(v) == 1;
  std::vector<double> sweep;
  for (const auto& r : report.rows)
    if (r.variant == "mask_sweep") sweep.push_back(r.mask_ratio);
  const bool ok = all && sweep == plan.mask_sweep && well_formed_csv(report.csv(), 10) && !report.text().empty();
  return {ok, fmt("%zu rows (7 variants + %zu sweep ratios), CSV well-formed: %s; %.0fs", report.rows.size(),
                  sweep.size(), well_formed_csv(report.csv(), 10) ? "yes" : "no", seconds_since(t0))};
}

Verdict container_round_trip() {
  std::mt19937_64 rng(9);
  std::vector<data::Dataset> cases;
  cases.push_back({});  // no recordings
  data::Dataset single;
  single.recordings.push_back({"one", {{testing::white_noise(rng), 3, std::nullopt}}});
  cases.push_back(single);
  data::Dataset hollow;
  hollow.recordings.push_back({"", {}});
  cases.push_back(hollow);
  for (int i = 0; i < 5; ++i) {
    data::Dataset d;
    const std::size_t recs = 1 + rng() % 4;
    for (std::size_t r = 0; r < recs; ++r) {
      data::Recording rec;
      rec.id = "rec" + std::to_string(rng() % 1000);
      const std::size_t n = rng() % 6;
      for (std::size_t e = 0; e < n; ++e) {
        auto raw = testing::white_noise(rng);
        raw[0] = -0.0f;
        raw[1] = std::numeric_limits<float>::denorm_min();
        rec.epochs.push_back({std::move(raw), int(rng() % 5), std::nullopt});
      }
      d.recordings.push_back(std::move(rec));
    }
    cases.push_back(std::move(d));
  }
  const auto path = fs::temp_directory_path() / "xmsleep_acceptance_rt.slpd";
  std::size_t good = 0;
  for (const auto& c : cases) {
    data::write_dataset(c, path);
    const auto back = data::read_dataset(path);
    bool ids = back.recordings.size() == c.recordings.size();
    for (std::size_t r = 0; ids && r < c.recordings.size(); ++r) ids = back.recordings[r].id == c.recordings[r].id;
    good += data::bitwise_equal(back, c) && ids && data::encode_dataset(back) == data::encode_dataset(c);
  }
  fs::remove(path);
  return {good == cases.size(), fmt("%zu/%zu datasets round-trip bitwise (incl. empty, single-epoch, "
                                    "zero-epoch recording)", good, cases.size())};
}

Verdict determinism() {
  const auto ds = data::generate_synthetic(3, 84, 10);
  auto cfg = train::TrainConfig::for_stage(train::StageKind::Pretrain);
  cfg.seed = 10;
  cfg.steps = 200;
  cfg.from_scratch = true;
  const auto a = train::pretrain_run(ds, cfg, nullptr);
  const auto b = train::pretrain_run(ds, cfg, nullptr);
  auto column = [](const train::TrainResult& r) {
    std::ostringstream os;
    train::write_log_csv(os, 0, r.log);
    return os.str();
  };
  const bool same = a.log.size() == 200 && column(a) == column(b);
  std::size_t equal_rows = 0;
  for (std::size_t i = 0; i < std::min(a.log.size(), b.log.size()); ++i)
    equal_rows += a.log[i].loss_total == b.log[i].loss_total && a.log[i].loss_epoch == b.log[i].loss_epoch &&
                  a.log[i].loss_seq == b.log[i].loss_seq;
  return {same && equal_rows == 200, fmt("%zu/200 logged steps bitwise identical", equal_rows)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) != 0; };

  int failures = 0;
  auto report = [&](int n, const char* title, const Verdict& v) {
    std::printf("%s %2d %s: %s\n", v.ok ? "PASS" : "FAIL", n, title, v.detail.c_str());
    std::fflush(stdout);
    failures += !v.ok;
  };
  auto guarded = [&](int n, const char* title, const std::function<Verdict()>& f) {
    if (!want(n)) return;
    try {
      report(n, title, f());
    } catch (const std::exception& e) {
      report(n, title, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, "gradient suite", gradient_suite);
  guarded(2, "spectrogram oracle", spectrogram_oracle);
  guarded(3, "closed-form losses", closed_form_losses);
  guarded(4, "shape contract", shape_contract);
  guarded(5, "masking invariants", masking_invariants);
  if (want(6) || want(7)) {
    try {
      const auto e2e = end_to_end();
      if (want(6)) report(6, "end-to-end overfit", e2e.overfit);
      if (want(7)) report(7, "freeze contract", e2e.freeze);
    } catch (const std::exception& e) {
      if (want(6)) report(6, "end-to-end overfit", {false, std::string("threw: ") + e.what()});
      if (want(7)) report(7, "freeze contract", {false, std::string("threw: ") + e.what()});
    }
  }
  guarded(8, "ablation harness", ablation_harness);
  guarded(9, "container round-trip", container_round_trip);
  guarded(10, "determinism", determinism);
  return failures;
}
