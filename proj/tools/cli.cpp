#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmsleep/checkpoint.hpp"
#include "xmsleep/data.hpp"
#include "xmsleep/errors.hpp"
#include "xmsleep/gradcheck.hpp"
#include "xmsleep/training.hpp"

namespace xmsleep::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using train::StageKind;
using train::TrainConfig;

// Bad flag combinations found after parsing; reported like parse errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> log;
};

struct TrainFlags {
  std::string data;
  std::optional<std::string> init;
  std::optional<std::string> preset;
  std::optional<std::size_t> steps, batch_size, stride, validate_every, patience;
  std::optional<double> lr, weight_decay, mask_ratio, tau, val_fraction;
  std::optional<std::string> mask_mode;
  bool no_masking = false;
  bool no_contrastive = false;
  bool no_augment = false;
  bool no_dropout = false;
  bool from_scratch = false;
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config not found: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
}

std::string require_out(const Globals& g, const char* what) {
  if (!g.out) throw UsageError(std::string("--out is required (") + what + ")");
  return *g.out;
}

void add_common_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "SLPD dataset container")->required();
  cmd->add_option("--preset", f.preset, "model preset: desk or paper");
  cmd->add_option("--steps", f.steps, "optimizer steps");
  cmd->add_option("--batch-size", f.batch_size, "sequences per batch");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
  cmd->add_option("--stride", f.stride, "window stride in epochs (0 = sequence length)");
  cmd->add_option("--val-fraction", f.val_fraction, "fraction of windows held out");
  cmd->add_flag("--no-augment", f.no_augment, "disable data augmentation");
  cmd->add_flag("--no-dropout", f.no_dropout, "disable dropout");
}

void add_validation_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--validate-every", f.validate_every, "steps between validation passes");
  cmd->add_option("--patience", f.patience, "validation events without improvement");
}

TrainConfig build_config(StageKind stage, const Globals& g, const TrainFlags& f) {
  TrainConfig c = TrainConfig::for_stage(stage);
  if (g.config) c = TrainConfig::from_json(load_json(*g.config), c);
  c.stage = stage;
  if (f.preset) c.model = ModelConfig::preset(*f.preset);
  if (f.steps) c.steps = *f.steps;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.lr) c.lr = *f.lr;
  if (f.weight_decay) c.weight_decay = *f.weight_decay;
  if (f.stride) c.stride = *f.stride;
  if (f.val_fraction) c.val_fraction = *f.val_fraction;
  if (f.validate_every) c.validate_every = *f.validate_every;
  if (f.patience) c.patience = *f.patience;
  if (f.mask_ratio) c.mask_ratio = *f.mask_ratio;
  if (f.mask_mode) c.mask_mode = nn::mask_mode_from_string(*f.mask_mode);
  if (f.tau) c.tau = *f.tau;
  if (f.no_masking) c.masking = false;
  if (f.no_contrastive) c.contrastive = false;
  if (f.no_augment) c.augment = false;
  if (f.no_dropout) c.dropout = false;
  if (f.from_scratch) c.from_scratch = true;
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

void write_log(const Globals& g, std::uint64_t seed, const std::vector<train::LogRow>& rows) {
  if (!g.log) return;
  std::ostringstream os;
  train::write_log_csv(os, seed, rows);
  write_text(*g.log, os.str());
}

json log_tail(const std::vector<train::LogRow>& rows) {
  if (rows.empty()) return nullptr;
  const auto& r = rows.back();
  return {{"step", r.step}, {"loss_total", r.loss_total}};
}

int cmd_synth(const Globals& g, std::size_t recordings, std::size_t epochs,
              const std::optional<std::string>& csv, double sample_rate, std::ostream& out) {
  const std::string path = require_out(g, "container path");
  const data::Dataset ds = csv ? data::read_csv_epochs(*csv, sample_rate)
                               : data::generate_synthetic(recordings, epochs, g.seed.value_or(0));
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  data::write_dataset(ds, path);
  out << json{{"path", path}, {"recordings", ds.recordings.size()}, {"epochs", ds.epoch_count()}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_spectrogram(const Globals& g, const std::string& data_path, std::ostream& out) {
  const std::string path = require_out(g, "spectrogram sidecar path");
  const auto ds = data::read_dataset(data_path);
  const auto specs = data::dataset_spectrograms(ds);
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  data::write_spectrogram_sidecar(path, specs);
  out << json{{"path", path}, {"epochs", specs.size()}, {"frames", dsp::kFrames}, {"bins", dsp::kBins}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_stage0(const Globals& g, const TrainFlags& f, std::ostream& out) {
  const TrainConfig cfg = build_config(StageKind::Stage0, g, f);
  const auto ds = data::read_dataset(f.data);
  auto res = train::stage0_train(ds, cfg);
  const std::string dir = g.out.value_or("stage0.ckpt");
  train::save_model(dir, *res.model, StageKind::Stage0, cfg);
  write_log(g, cfg.seed, res.log);
  out << json{{"stage", "stage0"},
              {"checkpoint", dir},
              {"final_loss", res.final_loss},
              {"train_acc_sg", res.train_acc_sg},
              {"train_acc_sp", res.train_acc_sp}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_pretrain(const Globals& g, const TrainFlags& f, std::ostream& out) {
  const TrainConfig cfg = build_config(StageKind::Pretrain, g, f);
  if (f.init && cfg.from_scratch) throw UsageError("--init and --from-scratch are exclusive");
  if (!f.init && !cfg.from_scratch) throw UsageError("pretrain needs --init or --from-scratch");
  const auto ds = data::read_dataset(f.data);
  train::ModelPtr init = f.init ? train::load_model(*f.init) : nullptr;
  auto res = train::pretrain_run(ds, cfg, std::move(init));
  const std::string dir = g.out.value_or("pretrain.ckpt");
  train::save_model(dir, *res.model, StageKind::Pretrain, cfg);
  write_log(g, cfg.seed, res.log);
  out << json{{"stage", "pretrain"},
              {"checkpoint", dir},
              {"steps_run", res.steps_run},
              {"stopped_early", res.stopped_early},
              {"val_acc", res.val_history},
              {"last", log_tail(res.log)}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_finetune(const Globals& g, const TrainFlags& f, std::ostream& out) {
  const TrainConfig cfg = build_config(StageKind::Finetune, g, f);
  if (!f.init) throw UsageError("finetune needs --init");
  const auto ds = data::read_dataset(f.data);
  auto res = train::finetune_run(ds, cfg, train::load_model(*f.init));
  const std::string dir = g.out.value_or("finetune.ckpt");
  train::save_model(dir, *res.model, StageKind::Finetune, cfg);
  write_log(g, cfg.seed, res.log);
  out << json{{"stage", "finetune"},
              {"checkpoint", dir},
              {"steps_run", res.steps_run},
              {"stopped_early", res.stopped_early},
              {"val_acc", res.val_history},
              {"last", log_tail(res.log)}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& data_path, const std::string& ckpt,
             std::ostream& out) {
  auto model = train::load_model(ckpt);
  const auto ds = data::read_dataset(data_path);
  const Metrics m = train::evaluate(ds, *model);
  const std::string text = m.to_json().dump(2) + "\n";
  if (g.out) write_text(*g.out, text);
  out << text;
  return kExitOk;
}

struct AblateFlags {
  std::string data;
  std::optional<std::string> eval_data;
  std::vector<std::string> variants;
  std::vector<double> mask_sweep;
  std::optional<std::size_t> stage0_steps, pretrain_steps, finetune_steps;
};

int cmd_ablate(const Globals& g, const TrainFlags& f, const AblateFlags& a, std::ostream& out) {
  const TrainConfig base = build_config(StageKind::Pretrain, g, f);
  train::AblationPlan plan;
  if (!a.variants.empty()) plan.variants = a.variants;
  plan.mask_sweep = a.mask_sweep;
  if (a.stage0_steps) plan.stage0_steps = *a.stage0_steps;
  if (a.pretrain_steps) plan.pretrain_steps = *a.pretrain_steps;
  if (a.finetune_steps) plan.finetune_steps = *a.finetune_steps;
  const auto ds = data::read_dataset(a.data);
  std::optional<data::Dataset> eval_ds;
  if (a.eval_data) eval_ds = data::read_dataset(*a.eval_data);
  const auto report = train::ablate(ds, eval_ds ? &*eval_ds : nullptr, base, plan);
  if (g.out) write_text(*g.out, report.csv());
  out << report.text();
  return kExitOk;
}

int cmd_gradcheck(const Globals& g, std::ostream& out, std::ostream& err) {
  const auto results = diff::run_gradcheck_suite(unsigned(g.seed.value_or(7)));
  std::size_t failed = 0;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-36s max_rel_error=%.3e tol=%.0e %s\n", r.name.c_str(),
                  r.max_rel_error, r.tolerance, r.passed ? "ok" : "FAIL");
    out << line;
    if (!r.passed) ++failed;
  }
  if (failed > 0) {
    err << "error: evaluation: " << failed << " of " << results.size()
        << " gradient checks exceed tolerance\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_describe(const Globals& g, const std::optional<std::string>& preset,
                 const std::optional<std::string>& data_path,
                 const std::optional<std::string>& ckpt, std::ostream& out) {
  json j;
  ModelConfig cfg = ModelConfig::desk();
  if (g.config) {
    const json c = load_json(*g.config);
    if (c.contains("model")) cfg = ModelConfig::from_json(c.at("model"));
  }
  if (preset) cfg = ModelConfig::preset(*preset);
  if (ckpt) {
    if (!diff::checkpoint_exists(*ckpt)) throw StateError("checkpoint not found");
    const json meta = diff::read_checkpoint_meta(*ckpt);
    j["checkpoint"] = meta;
    if (meta.contains("model")) cfg = ModelConfig::from_json(meta.at("model"));
  }
  cfg.validate();
  const nn::SleepModel<float> model(cfg, 0);
  std::map<std::string, std::size_t> by_part;
  for (const auto& p : model.params) by_part[p.name.substr(0, p.name.find('.'))] += p.tensor.numel();
  j["model"] = cfg.to_json();
  j["parameters"] = {{"total", model.params.scalar_count()}, {"by_component", by_part}};
  if (data_path) {
    const auto ds = data::read_dataset(*data_path);
    std::array<std::size_t, data::kNumClasses> counts{};
    for (const auto& r : ds.recordings)
      for (const auto& e : r.epochs) ++counts[std::size_t(e.label)];
    const auto windows = data::enumerate_windows(ds, cfg.seq_len);
    j["dataset"] = {{"recordings", ds.recordings.size()},
                    {"epochs", ds.epoch_count()},
                    {"class_counts", counts},
                    {"windows", windows.windows.size()},
                    {"warnings", windows.warnings}};
  }
  out << j.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal masked sleep staging: data, training, evaluation", "xmsleep"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  Globals g;
  app.add_option("--config", g.config, "JSON config (flags override file values)");
  app.add_option("--seed", g.seed, "run seed; every random stream derives from it");
  app.add_option("--out", g.out, "output file or checkpoint directory");
  app.add_option("--log", g.log, "training log CSV");

  std::size_t recordings = 3, epochs = 63;
  std::optional<std::string> csv;
  double sample_rate = 100.0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset container");
  synth->add_option("--recordings", recordings, "number of recordings")->capture_default_str();
  synth->add_option("--epochs", epochs, "epochs per recording")->capture_default_str();
  synth->add_option("--from-csv", csv, "convert a CSV fixture (one epoch per row) instead");
  synth->add_option("--sample-rate", sample_rate, "CSV sample rate, 100 or 125 Hz")
      ->capture_default_str();

  std::string data_path;
  auto* spectrogram = app.add_subcommand("spectrogram", "write the log-magnitude spectrograms");
  spectrogram->add_option("--data", data_path, "SLPD dataset container")->required();

  TrainFlags s0f, ptf, ftf, abf;
  auto* stage0 = app.add_subcommand("stage0", "train both backbones with single-epoch heads");
  add_common_train_flags(stage0, s0f);

  auto* pretrain = app.add_subcommand("pretrain", "joint contrastive + masked sequence training");
  add_common_train_flags(pretrain, ptf);
  add_validation_flags(pretrain, ptf);
  pretrain->add_option("--init", ptf.init, "stage-0 checkpoint directory");
  pretrain->add_flag("--from-scratch", ptf.from_scratch, "start without a stage-0 checkpoint");
  pretrain->add_option("--mask-ratio", ptf.mask_ratio, "fraction of masked positions");
  pretrain->add_option("--mask-mode", ptf.mask_mode, "independent or complementary");
  pretrain->add_option("--tau", ptf.tau, "InfoNCE temperature");
  pretrain->add_flag("--no-masking", ptf.no_masking, "disable sequence masking");
  pretrain->add_flag("--no-contrastive", ptf.no_contrastive, "disable the InfoNCE term");

  auto* finetune = app.add_subcommand("finetune", "train the sequence model on frozen encoders");
  add_common_train_flags(finetune, ftf);
  add_validation_flags(finetune, ftf);
  finetune->add_option("--init", ftf.init, "pretrain checkpoint directory");

  std::string ckpt;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("--data", data_path, "SLPD dataset container")->required();
  eval->add_option("--checkpoint", ckpt, "checkpoint directory")->required();

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "train and score the ablation variants");
  ablate->add_option("--data", af.data, "SLPD dataset container")->required();
  ablate->add_option("--eval-data", af.eval_data, "held-out container (default: validation windows)");
  ablate->add_option("--variants", af.variants, "comma-separated variant names")->delimiter(',');
  ablate->add_option("--mask-sweep", af.mask_sweep, "comma-separated mask ratios")->delimiter(',');
  ablate->add_option("--stage0-steps", af.stage0_steps, "stage-0 steps");
  ablate->add_option("--pretrain-steps", af.pretrain_steps, "pretrain steps per variant");
  ablate->add_option("--finetune-steps", af.finetune_steps, "finetune steps per variant");
  ablate->add_option("--preset", abf.preset, "model preset: desk or paper");
  ablate->add_option("--batch-size", abf.batch_size, "sequences per batch");
  ablate->add_option("--lr", abf.lr, "Adam learning rate");

  app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");

  std::optional<std::string> describe_preset, describe_data, describe_ckpt;
  auto* describe = app.add_subcommand("describe", "print the model configuration and sizes");
  describe->add_option("--preset", describe_preset, "model preset: desk or paper");
  describe->add_option("--data", describe_data, "summarize a dataset container");
  describe->add_option("--checkpoint", describe_ckpt, "read a checkpoint's metadata");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(g, recordings, epochs, csv, sample_rate, out);
    if (spectrogram->parsed()) return cmd_spectrogram(g, data_path, out);
    if (stage0->parsed()) return cmd_stage0(g, s0f, out);
    if (pretrain->parsed()) return cmd_pretrain(g, ptf, out);
    if (finetune->parsed()) return cmd_finetune(g, ftf, out);
    if (eval->parsed()) return cmd_eval(g, data_path, ckpt, out);
    if (ablate->parsed()) return cmd_ablate(g, abf, af, out);
    if (describe->parsed()) return cmd_describe(g, describe_preset, describe_data, describe_ckpt, out);
    return cmd_gradcheck(g, out, err);
  } catch (const UsageError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << '\n';
  } catch (const json::exception& e) {
    err << "error: format: " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    err << "error: input: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: runtime: " << e.what() << '\n';
  }
  return kExitRuntime;
}

}  // namespace xmsleep::cli
