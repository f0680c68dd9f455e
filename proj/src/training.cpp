#include "xmsleep/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "xmsleep/checkpoint.hpp"
#include "xmsleep/errors.hpp"
#include "xmsleep/optim.hpp"

namespace xmsleep::train {

using data::Window;
using diff::Tensor;

const char* to_string(StageKind s) {
  switch (s) {
    case StageKind::Stage0: return "stage0";
    case StageKind::Pretrain: return "pretrain";
    case StageKind::Finetune: return "finetune";
  }
  return "?";
}

StageKind stage_from_string(const std::string& name) {
  if (name == "stage0") return StageKind::Stage0;
  if (name == "pretrain") return StageKind::Pretrain;
  if (name == "finetune") return StageKind::Finetune;
  throw InputError("unknown stage '" + name + "'");
}

TrainConfig TrainConfig::for_stage(StageKind stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case StageKind::Stage0:
      c.steps = 300;
      c.augment = false;
      c.masking = false;
      c.contrastive = false;
      break;
    case StageKind::Pretrain:
      c.steps = 2000;
      break;
    case StageKind::Finetune:
      c.steps = 500;
      c.augment = false;
      c.masking = false;
      c.contrastive = false;
      c.mask_ratio = 0.0;
      break;
  }
  return c;
}

std::array<double, 3> TrainConfig::weights() const {
  if (loss_weights) return *loss_weights;
  return stage == StageKind::Finetune ? nn::kFinetuneWeights : nn::kPretrainWeights;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw InputError("train: lr must be positive");
  if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
  if (stride > model.seq_len) throw InputError("train: stride must not exceed seq_len");
  if (mask_ratio < 0.0 || mask_ratio > 1.0) throw InputError("train: mask_ratio must be in [0,1]");
  if (mask_mode == nn::MaskMode::Complementary && mask_ratio > 0.5) {
    throw InputError("train: complementary masking needs mask_ratio <= 0.5");
  }
  if (!(tau > 0.0)) throw InputError("train: tau must be positive");
  if (validate_every < 1) throw InputError("train: validate_every must be >= 1");
  if (patience < 1) throw InputError("train: patience must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw InputError("train: val_fraction must be in [0,1)");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"stage", to_string(stage)},
                      {"model", model.to_json()},
                      {"lr", lr},
                      {"beta1", beta1},
                      {"beta2", beta2},
                      {"weight_decay", weight_decay},
                      {"batch_size", batch_size},
                      {"stride", stride},
                      {"steps", steps},
                      {"mask_ratio", mask_ratio},
                      {"mask_mode", nn::to_string(mask_mode)},
                      {"masking", masking},
                      {"contrastive", contrastive},
                      {"tau", tau},
                      {"validate_every", validate_every},
                      {"patience", patience},
                      {"val_fraction", val_fraction},
                      {"seed", seed},
                      {"augment", augment},
                      {"dropout", dropout},
                      {"from_scratch", from_scratch}};
  j["loss_weights"] = weights();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  try {
    auto take = [&j](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("stage")) c.stage = stage_from_string(j.at("stage").get<std::string>());
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    take("lr", c.lr);
    take("beta1", c.beta1);
    take("beta2", c.beta2);
    take("weight_decay", c.weight_decay);
    take("batch_size", c.batch_size);
    take("stride", c.stride);
    take("steps", c.steps);
    take("mask_ratio", c.mask_ratio);
    if (j.contains("mask_mode")) c.mask_mode = nn::mask_mode_from_string(j.at("mask_mode").get<std::string>());
    take("masking", c.masking);
    take("contrastive", c.contrastive);
    take("tau", c.tau);
    take("validate_every", c.validate_every);
    take("patience", c.patience);
    take("val_fraction", c.val_fraction);
    take("seed", c.seed);
    take("augment", c.augment);
    take("dropout", c.dropout);
    take("from_scratch", c.from_scratch);
    if (j.contains("loss_weights")) c.loss_weights = j.at("loss_weights").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : name) h = (h ^ ch) * 1099511628211ULL;
  // splitmix64 finalizer
  std::uint64_t z = seed ^ h;
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool should_stop(std::span<const double> history, std::size_t patience) {
  if (patience < 1) throw InputError("should_stop: patience must be >= 1");
  if (history.empty()) return false;
  std::size_t best_at = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] > history[best_at]) best_at = i;
  return history.size() - 1 - best_at >= patience;
}

void write_log_csv(std::ostream& os, std::uint64_t seed, const std::vector<LogRow>& rows) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  os << "# seed=" << seed << "\n";
  os << "step,loss_epoch,loss_seq,loss_total,val_acc\n";
  for (const auto& r : rows) {
    os << r.step << ',' << (r.loss_epoch ? num(*r.loss_epoch) : "") << ','
       << (r.loss_seq ? num(*r.loss_seq) : "") << ',' << num(r.loss_total) << ','
       << (r.val_acc ? num(*r.val_acc) : "") << '\n';
  }
}

PreparedData::PreparedData(const data::Dataset& ds) {
  for (const auto& rec : ds.recordings) {
    offsets_.push_back(labels_.size());
    for (const auto& ep : rec.epochs) {
      auto z = dsp::zscore_normalize(ep.raw);
      spec_.push_back(ep.spectrogram ? *ep.spectrogram : dsp::stft_spectrogram(z));
      raw_.push_back(std::move(z));
      labels_.push_back(ep.label);
    }
  }
}

Split split_windows(const data::Dataset& ds, const TrainConfig& cfg) {
  auto set = data::enumerate_windows(ds, cfg.model.seq_len, cfg.stride);
  if (set.windows.empty()) {
    throw InputError("no recording reaches the sequence length " + std::to_string(cfg.model.seq_len));
  }
  std::mt19937_64 rng(sub_seed(cfg.seed, "split"));
  std::shuffle(set.windows.begin(), set.windows.end(), rng);
  const std::size_t n = set.windows.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * double(n)));
  if (n >= 2 && cfg.val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  Split s;
  s.val.assign(set.windows.begin(), set.windows.begin() + std::ptrdiff_t(n_val));
  s.train.assign(set.windows.begin() + std::ptrdiff_t(n_val), set.windows.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

EpochHeads::EpochHeads(std::size_t d_model, std::uint64_t seed)
    : params(seed),
      sg(params, "stage0.head_sg", d_model, data::kNumClasses),
      sp(params, "stage0.head_sp", d_model, data::kNumClasses) {}

namespace {

// Reshuffling cursor over a fixed item list; a pass ends when fewer than
// `n` items remain.
template <typename Item>
class Cycler {
 public:
  Cycler(std::vector<Item> items, std::uint64_t seed) : items_(std::move(items)), rng_(seed) {
    reshuffle();
  }
  std::vector<Item> next(std::size_t n) {
    n = std::min(n, items_.size());
    if (pos_ + n > items_.size()) reshuffle();
    std::vector<Item> out(items_.begin() + std::ptrdiff_t(pos_),
                          items_.begin() + std::ptrdiff_t(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(items_.begin(), items_.end(), rng_);
    pos_ = 0;
  }
  std::vector<Item> items_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> window_epochs(const PreparedData& pd, const std::vector<Window>& wins,
                                       std::size_t length) {
  std::vector<std::size_t> idx;
  idx.reserve(wins.size() * length);
  for (const auto& w : wins)
    for (std::size_t j = 0; j < length; ++j) idx.push_back(pd.epoch_index(w.recording, w.start + j));
  return idx;
}

struct EpochInputs {
  Tensor<float> raw, spec;
  std::vector<int> labels;
};

EpochInputs gather_epochs(const PreparedData& pd, const std::vector<std::size_t>& idx,
                          std::mt19937_64* augment_rng) {
  const std::size_t n = idx.size();
  std::vector<float> raw(n * dsp::kEpochSamples), spec(n * dsp::kFrames * dsp::kBins);
  EpochInputs in;
  in.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = idx[i];
    float* rdst = raw.data() + i * dsp::kEpochSamples;
    float* sdst = spec.data() + i * dsp::kFrames * dsp::kBins;
    if (augment_rng != nullptr) {
      const auto kind = dsp::random_raw_kind(*augment_rng);
      const auto aug = dsp::augment_raw(pd.raw(e), kind, *augment_rng);
      std::copy(aug.begin(), aug.end(), rdst);
      const auto s = dsp::augment_spec(pd.spec(e), *augment_rng);
      std::copy(s.values.begin(), s.values.end(), sdst);
    } else {
      std::copy(pd.raw(e).begin(), pd.raw(e).end(), rdst);
      std::copy(pd.spec(e).values.begin(), pd.spec(e).values.end(), sdst);
    }
    in.labels.push_back(pd.label(e));
  }
  in.raw = Tensor<float>({n, 1, dsp::kEpochSamples}, std::move(raw));
  in.spec = Tensor<float>({n, dsp::kFrames, dsp::kBins}, std::move(spec));
  return in;
}

nn::SequenceBatch<float> sequence_batch(const PreparedData& pd, const std::vector<Window>& wins,
                                        std::size_t length, std::mt19937_64* augment_rng) {
  auto in = gather_epochs(pd, window_epochs(pd, wins, length), augment_rng);
  return {wins.size(), length, in.raw, in.spec, std::move(in.labels)};
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.numel() / c;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.data().data() + r * c;
    out[r] = int(std::max_element(row, row + c) - row);  // first maximum wins ties
  }
  return out;
}

diff::AdamState make_adam(const TrainConfig& cfg) {
  diff::AdamState st;
  st.lr = cfg.lr;
  st.beta1 = cfg.beta1;
  st.beta2 = cfg.beta2;
  st.weight_decay = cfg.weight_decay;
  return st;
}

void freeze(Model& m, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) m.params.set_trainable(p, false);
}

void unfreeze_all(Model& m) { m.params.set_trainable("", true); }

constexpr std::size_t kEvalChunk = 64;  // epochs per no-grad forward

// Pooled eval-mode features of the listed epochs, [n*D] per modality.
std::pair<std::vector<float>, std::vector<float>> encode_epochs(const Model& model,
                                                               const PreparedData& pd,
                                                               const std::vector<std::size_t>& idx) {
  diff::NoGradGuard guard;
  nn::ForwardContext ctx;
  const std::size_t d = model.config.d_model;
  std::vector<float> sg(idx.size() * d), sp(idx.size() * d);
  for (std::size_t s = 0; s < idx.size(); s += kEvalChunk) {
    std::vector<std::size_t> part(idx.begin() + std::ptrdiff_t(s),
                                  idx.begin() + std::ptrdiff_t(std::min(idx.size(), s + kEvalChunk)));
    auto in = gather_epochs(pd, part, nullptr);
    auto f_sg = model.encode_raw(in.raw);
    auto f_sp = model.encode_spec(in.spec, ctx);
    std::copy(f_sg.data().begin(), f_sg.data().end(), sg.begin() + std::ptrdiff_t(s * d));
    std::copy(f_sp.data().begin(), f_sp.data().end(), sp.begin() + std::ptrdiff_t(s * d));
  }
  return {std::move(sg), std::move(sp)};
}

// Eval-mode predictions of logits_cat for the windows, in window order.
std::vector<int> predict_windows(const Model& model, const PreparedData& pd,
                                 const std::vector<Window>& wins) {
  diff::NoGradGuard guard;
  nn::ForwardContext ctx;
  nn::ForwardOptions opt;
  opt.contrastive = false;
  const std::size_t chunk = std::max<std::size_t>(1, kEvalChunk / model.config.seq_len);
  std::vector<int> pred;
  for (std::size_t s = 0; s < wins.size(); s += chunk) {
    std::vector<Window> part(wins.begin() + std::ptrdiff_t(s),
                             wins.begin() + std::ptrdiff_t(std::min(wins.size(), s + chunk)));
    auto batch = sequence_batch(pd, part, model.config.seq_len, nullptr);
    auto r = model.forward(batch, opt, ctx);
    auto p = argmax_rows(r.logits.cat);
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return pred;
}

double accuracy_of(const std::vector<int>& truth, const std::vector<int>& pred) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return truth.empty() ? 0.0 : double(hit) / double(truth.size());
}

std::vector<int> labels_of(const PreparedData& pd, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto e : idx) out.push_back(pd.label(e));
  return out;
}

void require_stage(const TrainConfig& cfg, StageKind want) {
  if (cfg.stage != want) {
    throw InputError(std::string("config stage is ") + to_string(cfg.stage) + ", expected " +
                     to_string(want));
  }
  cfg.validate();
}

ModelPtr clone_model(const Model& src) {
  auto m = std::make_unique<Model>(src.config, 0);
  for (std::size_t i = 0; i < src.params.size(); ++i) {
    auto dst = m->params[i].tensor.data_mut();
    const auto s = src.params[i].tensor.data();
    std::copy(s.begin(), s.end(), dst.begin());
  }
  return m;
}

}  // namespace

Stage0Result stage0_train(const data::Dataset& ds, const TrainConfig& cfg) {
  require_stage(cfg, StageKind::Stage0);
  if (ds.epoch_count() == 0) throw InputError("stage0: empty dataset");
  const PreparedData pd(ds);
  const Split split = split_windows(ds, cfg);
  const auto train_idx = window_epochs(pd, split.train, cfg.model.seq_len);

  Stage0Result res;
  res.model = std::make_unique<Model>(cfg.model, sub_seed(cfg.seed, "init"));
  res.heads = std::make_unique<EpochHeads>(cfg.model.d_model, sub_seed(cfg.seed, "stage0.heads"));
  Model& m = *res.model;
  for (auto& p : m.params) p.trainable = false;
  for (const auto& pre : nn::kBackbonePrefixes) m.params.set_trainable(pre, true);

  auto adam = make_adam(cfg);
  auto head_adam = make_adam(cfg);
  Cycler<std::size_t> batches(train_idx, sub_seed(cfg.seed, "batches"));
  std::mt19937_64 drop_rng(sub_seed(cfg.seed, "dropout"));
  std::mt19937_64 aug_rng(sub_seed(cfg.seed, "augment"));
  const std::size_t n_batch = cfg.batch_size * cfg.model.seq_len;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    m.params.zero_grad();
    res.heads->params.zero_grad();
    auto in = gather_epochs(pd, batches.next(n_batch), cfg.augment ? &aug_rng : nullptr);
    nn::ForwardContext ctx{cfg.dropout, &drop_rng, nullptr};
    auto l_sg = diff::cross_entropy(res.heads->sg(m.encode_raw(in.raw)), std::span<const int>(in.labels));
    auto l_sp = diff::cross_entropy(res.heads->sp(m.encode_spec(in.spec, ctx)), std::span<const int>(in.labels));
    auto loss = diff::add(l_sg, l_sp);
    loss.backward();
    diff::adam_step(m.params, adam);
    diff::adam_step(res.heads->params, head_adam);
    res.final_loss = double(loss.item());
    res.log.push_back({step, std::nullopt, std::nullopt, res.final_loss, std::nullopt});
  }
  unfreeze_all(m);

  const auto truth = labels_of(pd, train_idx);
  auto [sg, sp] = encode_epochs(m, pd, train_idx);
  const std::size_t d = cfg.model.d_model;
  diff::NoGradGuard guard;
  auto pred_sg = argmax_rows(res.heads->sg(Tensor<float>({train_idx.size(), d}, std::move(sg))));
  auto pred_sp = argmax_rows(res.heads->sp(Tensor<float>({train_idx.size(), d}, std::move(sp))));
  res.train_acc_sg = accuracy_of(truth, pred_sg);
  res.train_acc_sp = accuracy_of(truth, pred_sp);
  return res;
}

TrainResult pretrain_run(const data::Dataset& ds, const TrainConfig& cfg, ModelPtr init) {
  require_stage(cfg, StageKind::Pretrain);
  if (!init) {
    if (!cfg.from_scratch) throw StateError("pretrain needs a stage-0 checkpoint (or from_scratch)");
    init = std::make_unique<Model>(cfg.model, sub_seed(cfg.seed, "init"));
  }
  TrainResult res;
  res.model = std::move(init);
  Model& m = *res.model;
  const std::size_t len = m.config.seq_len;
  if (cfg.contrastive && cfg.batch_size < 2) throw InputError("pretrain: InfoNCE needs batch_size >= 2");

  const PreparedData pd(ds);
  TrainConfig local = cfg;
  local.model = m.config;
  const Split split = split_windows(ds, local);
  if (cfg.contrastive && split.train.size() < 2) throw InputError("pretrain: fewer than 2 training windows");
  const auto val_truth = labels_of(pd, window_epochs(pd, split.val, len));

  unfreeze_all(m);
  if (!cfg.contrastive) freeze(m, nn::kProjectionPrefixes);
  const bool masking = cfg.masking && cfg.mask_ratio > 0.0;
  if (!masking) freeze(m, {"seq.mask_"});

  auto adam = make_adam(cfg);
  Cycler<Window> batches(split.train, sub_seed(cfg.seed, "batches"));
  std::mt19937_64 drop_rng(sub_seed(cfg.seed, "dropout"));
  std::mt19937_64 aug_rng(sub_seed(cfg.seed, "augment"));
  std::mt19937_64 mask_rng(sub_seed(cfg.seed, "masks"));
  const auto weights = cfg.weights();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    m.params.zero_grad();
    auto wins = batches.next(cfg.batch_size);
    auto batch = sequence_batch(pd, wins, len, cfg.augment ? &aug_rng : nullptr);
    nn::ForwardOptions opt;
    opt.contrastive = cfg.contrastive;
    opt.tau = cfg.tau;
    opt.weights = weights;
    if (cfg.masking) {
      for (std::size_t b = 0; b < wins.size(); ++b) {
        auto spec = nn::sample_masks(len, cfg.mask_ratio, cfg.mask_mode, mask_rng);
        opt.mask_sg.insert(opt.mask_sg.end(), spec.sg.begin(), spec.sg.end());
        opt.mask_sp.insert(opt.mask_sp.end(), spec.sp.begin(), spec.sp.end());
      }
    }
    nn::ForwardContext ctx{cfg.dropout, &drop_rng, nullptr};
    auto r = m.forward(batch, opt, ctx);
    r.total.backward();
    diff::adam_step(m.params, adam);

    LogRow row{step, std::nullopt, double(r.loss_seq.item()), double(r.total.item()), std::nullopt};
    if (r.loss_epoch) row.loss_epoch = double(r.loss_epoch->item());
    res.steps_run = step + 1;
    if (!split.val.empty() && (step + 1) % cfg.validate_every == 0) {
      const double acc = accuracy_of(val_truth, predict_windows(m, pd, split.val));
      row.val_acc = acc;
      res.val_history.push_back(acc);
    }
    res.log.push_back(row);
    if (row.val_acc && should_stop(res.val_history, cfg.patience)) {
      res.stopped_early = true;
      break;
    }
  }
  unfreeze_all(m);
  return res;
}

TrainResult finetune_run(const data::Dataset& ds, const TrainConfig& cfg, ModelPtr init) {
  require_stage(cfg, StageKind::Finetune);
  if (!init) throw StateError("finetune needs a pre-trained checkpoint");
  TrainResult res;
  res.model = std::move(init);
  Model& m = *res.model;
  const std::size_t len = m.config.seq_len, d = m.config.d_model;

  const PreparedData pd(ds);
  TrainConfig local = cfg;
  local.model = m.config;
  const Split split = split_windows(ds, local);

  unfreeze_all(m);
  freeze(m, nn::kBackbonePrefixes);
  freeze(m, nn::kProjectionPrefixes);
  freeze(m, {"seq.mask_"});

  // Frozen encoders run in eval mode, so their features are fixed.
  std::vector<std::size_t> all(pd.size());
  std::iota(all.begin(), all.end(), 0);
  const auto [feat_sg, feat_sp] = encode_epochs(m, pd, all);
  auto gather = [&](const std::vector<Window>& wins) {
    const auto idx = window_epochs(pd, wins, len);
    std::vector<float> a(idx.size() * d), b(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(feat_sg.begin() + std::ptrdiff_t(idx[i] * d), d, a.begin() + std::ptrdiff_t(i * d));
      std::copy_n(feat_sp.begin() + std::ptrdiff_t(idx[i] * d), d, b.begin() + std::ptrdiff_t(i * d));
    }
    return std::tuple{Tensor<float>({wins.size(), len, d}, std::move(a)),
                      Tensor<float>({wins.size(), len, d}, std::move(b)), labels_of(pd, idx)};
  };
  auto validate = [&]() {
    diff::NoGradGuard guard;
    nn::ForwardContext ctx;
    nn::ForwardOptions opt;
    opt.contrastive = false;
    auto [a, b, truth] = gather(split.val);
    auto r = m.forward_features(a, b, truth, opt, ctx);
    return accuracy_of(truth, argmax_rows(r.logits.cat));
  };

  auto adam = make_adam(cfg);
  Cycler<Window> batches(split.train, sub_seed(cfg.seed, "batches"));
  std::mt19937_64 drop_rng(sub_seed(cfg.seed, "dropout"));
  nn::ForwardOptions opt;
  opt.contrastive = false;
  opt.weights = cfg.weights();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    m.params.zero_grad();
    auto [a, b, labels] = gather(batches.next(cfg.batch_size));
    nn::ForwardContext ctx{cfg.dropout, &drop_rng, nullptr};
    auto r = m.forward_features(a, b, labels, opt, ctx);
    r.total.backward();
    diff::adam_step(m.params, adam);

    LogRow row{step, std::nullopt, double(r.loss_seq.item()), double(r.total.item()), std::nullopt};
    res.steps_run = step + 1;
    if (!split.val.empty() && (step + 1) % cfg.validate_every == 0) {
      row.val_acc = validate();
      res.val_history.push_back(*row.val_acc);
    }
    res.log.push_back(row);
    if (row.val_acc && should_stop(res.val_history, cfg.patience)) {
      res.stopped_early = true;
      break;
    }
  }
  unfreeze_all(m);
  return res;
}

Metrics evaluate(const data::Dataset& ds, const Model& model, const std::vector<Window>& windows) {
  const PreparedData pd(ds);
  auto wins = windows;
  if (wins.empty()) wins = data::enumerate_windows(ds, model.config.seq_len).windows;
  if (wins.empty()) throw EvaluationError("no window of length " + std::to_string(model.config.seq_len));
  const auto truth = labels_of(pd, window_epochs(pd, wins, model.config.seq_len));
  return compute_metrics(truth, predict_windows(model, pd, wins));
}

Metrics evaluate_epochs(const data::Dataset& ds, const Model& model, const EpochHeads& heads,
                        const std::string& branch, const std::vector<Window>& windows) {
  if (branch != "sg" && branch != "sp") throw InputError("branch must be sg or sp");
  const PreparedData pd(ds);
  std::vector<std::size_t> idx;
  if (windows.empty()) {
    idx.resize(pd.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    idx = window_epochs(pd, windows, model.config.seq_len);
  }
  if (idx.empty()) throw EvaluationError("no epochs to score");
  auto [sg, sp] = encode_epochs(model, pd, idx);
  diff::NoGradGuard guard;
  const std::size_t d = model.config.d_model;
  auto logits = branch == "sg" ? heads.sg(Tensor<float>({idx.size(), d}, std::move(sg)))
                               : heads.sp(Tensor<float>({idx.size(), d}, std::move(sp)));
  return compute_metrics(labels_of(pd, idx), argmax_rows(logits));
}

void save_model(const std::filesystem::path& dir, const Model& model, StageKind stage,
                const TrainConfig& cfg) {
  nlohmann::json meta = {{"stage", to_string(stage)}, {"model", model.config.to_json()},
                         {"train", cfg.to_json()}};
  diff::write_checkpoint(dir, model.params, meta);
}

ModelPtr load_model(const std::filesystem::path& dir) {
  if (!diff::checkpoint_exists(dir)) throw StateError("checkpoint not found");
  const auto meta = diff::read_checkpoint_meta(dir);
  if (!meta.contains("model")) throw FormatError("checkpoint meta lacks the model config");
  auto m = std::make_unique<Model>(ModelConfig::from_json(meta.at("model")), 0);
  diff::load_checkpoint(dir, m->params, diff::LoadMode::Strict);
  return m;
}

std::string AblationReport::csv() const {
  std::ostringstream os;
  os << "variant,mask_ratio,accuracy,macro_f1\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : rows)
    os << r.variant << ',' << r.mask_ratio << ',' << r.accuracy << ',' << r.macro_f1 << '\n';
  return os.str();
}

std::string AblationReport::text() const {
  std::ostringstream os;
  os << std::left << std::setw(20) << "variant" << std::right << std::setw(8) << "mask"
     << std::setw(10) << "ACC" << std::setw(10) << "MF1" << '\n';
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << r.variant << std::right << std::setw(8)
       << std::setprecision(2) << r.mask_ratio << std::setw(10) << std::setprecision(4)
       << r.accuracy << std::setw(10) << r.macro_f1 << '\n';
  }
  return os.str();
}

AblationReport ablate(const data::Dataset& ds, const data::Dataset* eval_ds,
                      const TrainConfig& base, const AblationPlan& plan) {
  for (const auto& v : plan.variants) {
    if (std::find(kAblationVariants.begin(), kAblationVariants.end(), v) == kAblationVariants.end()) {
      throw InputError("unknown ablation variant '" + v + "'");
    }
  }
  for (double r : plan.mask_sweep)
    if (r < 0.0 || r > 1.0) throw InputError("mask sweep ratios must be in [0,1]");

  TrainConfig s0 = base;
  s0.stage = StageKind::Stage0;
  s0.steps = plan.stage0_steps;
  s0.augment = false;
  auto stage0 = stage0_train(ds, s0);

  const data::Dataset& scored = eval_ds ? *eval_ds : ds;
  std::vector<Window> held;
  if (!eval_ds) held = split_windows(ds, s0).val;

  auto pretrain_cfg = [&](bool contrastive, bool masking, double ratio) {
    TrainConfig c = base;
    c.stage = StageKind::Pretrain;
    c.steps = plan.pretrain_steps;
    c.contrastive = contrastive;
    c.masking = masking;
    c.mask_ratio = ratio;
    c.loss_weights.reset();
    return c;
  };
  auto finetune = [&](ModelPtr m) {
    TrainConfig c = base;
    c.stage = StageKind::Finetune;
    c.steps = plan.finetune_steps;
    c.augment = false;
    c.masking = false;
    c.contrastive = false;
    c.loss_weights.reset();
    return finetune_run(ds, c, std::move(m)).model;
  };

  AblationReport report;
  auto add_row = [&](const std::string& name, double ratio, const Metrics& mt) {
    report.rows.push_back({name, ratio, mt.accuracy, mt.macro_f1});
  };
  const double ratio = base.mask_ratio;
  ModelPtr full_pt;
  for (const auto& v : plan.variants) {
    if (v == "TF_only") {
      add_row(v, 0.0, evaluate_epochs(scored, *stage0.model, *stage0.heads, "sp", held));
    } else if (v == "CNN_only") {
      add_row(v, 0.0, evaluate_epochs(scored, *stage0.model, *stage0.heads, "sg", held));
    } else if (v == "TF_CNN_multi") {
      auto m = pretrain_run(ds, pretrain_cfg(false, false, 0.0), clone_model(*stage0.model)).model;
      add_row(v, 0.0, evaluate(scored, *m, held));
    } else if (v == "TF_CNN_CL_FT") {
      auto m = finetune(pretrain_run(ds, pretrain_cfg(true, false, 0.0), clone_model(*stage0.model)).model);
      add_row(v, 0.0, evaluate(scored, *m, held));
    } else if (v == "TF_CNN_M_FT") {
      auto m = finetune(pretrain_run(ds, pretrain_cfg(false, true, ratio), clone_model(*stage0.model)).model);
      add_row(v, ratio, evaluate(scored, *m, held));
    } else {
      if (!full_pt) {
        full_pt = pretrain_run(ds, pretrain_cfg(true, true, ratio), clone_model(*stage0.model)).model;
      }
      if (v == "TF_CNN_PT_CL_M") {
        add_row(v, ratio, evaluate(scored, *full_pt, held));
      } else {
        auto m = finetune(clone_model(*full_pt));
        add_row(v, ratio, evaluate(scored, *m, held));
      }
    }
  }
  for (double r : plan.mask_sweep) {
    auto m = pretrain_run(ds, pretrain_cfg(true, r > 0.0, r), clone_model(*stage0.model)).model;
    add_row("mask_sweep", r, evaluate(scored, *m, held));
  }
  return report;
}

}  // namespace xmsleep::train
