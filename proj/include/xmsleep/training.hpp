#pragma once

// Stage-0 backbone warm-up, joint pre-training, frozen-encoder fine-tuning,
// evaluation, early stopping and the ablation harness.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xmsleep/config.hpp"
#include "xmsleep/data.hpp"
#include "xmsleep/metrics.hpp"
#include "xmsleep/model.hpp"

namespace xmsleep::train {

using Model = nn::SleepModel<float>;
using ModelPtr = std::unique_ptr<Model>;

enum class StageKind { Stage0, Pretrain, Finetune };
const char* to_string(StageKind s);
StageKind stage_from_string(const std::string& name);

struct TrainConfig {
  StageKind stage = StageKind::Pretrain;
  ModelConfig model = ModelConfig::desk();
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-5;
  std::size_t batch_size = 4;  // sequences; stage 0 uses batch_size * seq_len epochs
  std::size_t stride = 0;      // window stride, 0 = seq_len
  std::size_t steps = 2000;
  double mask_ratio = 0.5;
  nn::MaskMode mask_mode = nn::MaskMode::Independent;
  bool masking = true;
  bool contrastive = true;
  double tau = 0.1;
  std::optional<std::array<double, 3>> loss_weights;  // stage default when unset
  std::size_t validate_every = 100;
  std::size_t patience = 20;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  bool dropout = true;
  bool from_scratch = false;  // pretrain without stage-0 init

  static TrainConfig for_stage(StageKind stage);
  std::array<double, 3> weights() const;
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

// Independent stream for a named component ("init", "split", "batches",
// "augment", "masks", "dropout") derived from the run seed.
std::uint64_t sub_seed(std::uint64_t seed, std::string_view name);

// True iff the best value has not strictly improved during the last
// `patience` validation events.
bool should_stop(std::span<const double> history, std::size_t patience);

struct LogRow {
  std::size_t step = 0;
  std::optional<double> loss_epoch;
  std::optional<double> loss_seq;
  double loss_total = 0.0;
  std::optional<double> val_acc;
};

// "# seed=<seed>" line, header `step,loss_epoch,loss_seq,loss_total,val_acc`, rows.
void write_log_csv(std::ostream& os, std::uint64_t seed, const std::vector<LogRow>& rows);

// Per-epoch model inputs: z-scored raw and the spectrogram of the
// un-augmented epoch, flattened in dataset order.
class PreparedData {
 public:
  explicit PreparedData(const data::Dataset& ds);

  std::size_t epoch_index(std::size_t recording, std::size_t position) const {
    return offsets_[recording] + position;
  }
  std::size_t size() const { return labels_.size(); }
  const std::vector<float>& raw(std::size_t i) const { return raw_[i]; }
  const dsp::Spectrogram& spec(std::size_t i) const { return spec_[i]; }
  int label(std::size_t i) const { return labels_[i]; }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::vector<float>> raw_;
  std::vector<dsp::Spectrogram> spec_;
  std::vector<int> labels_;
};

struct Split {
  std::vector<data::Window> train;
  std::vector<data::Window> val;
};

// Windows shuffled by sub_seed(seed, "split"); floor(val_fraction * n)
// (at least one when n >= 2) are held out.
Split split_windows(const data::Dataset& ds, const TrainConfig& cfg);

// Temporary single-epoch classifiers used by stage 0.
struct EpochHeads {
  diff::ModelParams<float> params;
  nn::Linear<float> sg, sp;
  EpochHeads(std::size_t d_model, std::uint64_t seed);
};

struct Stage0Result {
  ModelPtr model;
  std::unique_ptr<EpochHeads> heads;
  std::vector<LogRow> log;
  double final_loss = 0.0;
  double train_acc_sg = 0.0;  // single-epoch accuracy over the training epochs
  double train_acc_sp = 0.0;
};

struct TrainResult {
  ModelPtr model;
  std::vector<LogRow> log;
  std::vector<double> val_history;
  std::size_t steps_run = 0;
  bool stopped_early = false;
};

// Each backbone + its pooling + a temporary linear head trained with
// cross-entropy on single epochs of the training windows.
Stage0Result stage0_train(const data::Dataset& ds, const TrainConfig& cfg);

// Joint pre-training: InfoNCE + masked sequence loss, Adam, periodic
// validation on logits_cat with early stopping. `init` is the stage-0 model;
// null requires cfg.from_scratch.
TrainResult pretrain_run(const data::Dataset& ds, const TrainConfig& cfg, ModelPtr init);

// Encoders and projections frozen, no masking, no InfoNCE, weights (1,1,1).
TrainResult finetune_run(const data::Dataset& ds, const TrainConfig& cfg, ModelPtr init);

// Eval-mode sequence predictions (argmax logits_cat) over the given windows,
// or every stride-L window of the dataset when `windows` is empty.
Metrics evaluate(const data::Dataset& ds, const Model& model,
                 const std::vector<data::Window>& windows = {});

// Single-epoch predictions with a stage-0 head; `branch` is "sg" or "sp".
Metrics evaluate_epochs(const data::Dataset& ds, const Model& model, const EpochHeads& heads,
                        const std::string& branch, const std::vector<data::Window>& windows = {});

// Checkpoints: parameters plus {"stage", "model", "train"} metadata.
void save_model(const std::filesystem::path& dir, const Model& model, StageKind stage,
                const TrainConfig& cfg);
// StateError "checkpoint not found" when the directory has no manifest.
ModelPtr load_model(const std::filesystem::path& dir);

inline const std::vector<std::string> kAblationVariants{
    "TF_only", "CNN_only", "TF_CNN_multi", "TF_CNN_CL_FT", "TF_CNN_M_FT", "TF_CNN_PT_CL_M",
    "TF_CNN_PT_CL_M_FT"};

struct AblationRow {
  std::string variant;
  double mask_ratio = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string csv() const;   // variant,mask_ratio,accuracy,macro_f1
  std::string text() const;  // aligned table
};

struct AblationPlan {
  std::vector<std::string> variants = kAblationVariants;
  std::vector<double> mask_sweep;  // non-empty adds one TF_CNN_PT_CL_M row per ratio
  std::size_t stage0_steps = 300;
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 500;
};

// Trains every requested variant from one shared stage-0 model and scores it
// on `eval_ds` (or on the held-out windows of `ds` when eval_ds is null).
// Unknown variant names raise InputError before any training starts.
AblationReport ablate(const data::Dataset& ds, const data::Dataset* eval_ds,
                      const TrainConfig& base, const AblationPlan& plan);

}  // namespace xmsleep::train
