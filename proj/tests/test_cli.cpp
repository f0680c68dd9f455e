#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "xmsleep/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = xmsleep::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path workdir() {
  const auto dir = fs::temp_directory_path() / "xmsleep_cli_test";
  static bool fresh = [&] {
    fs::remove_all(dir);
    fs::create_directories(dir);
    return true;
  }();
  (void)fresh;
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

const std::string& dataset() {
  static const std::string p = [] {
    const auto r = run({"synth", "--recordings", "2", "--epochs", "63", "--seed", "7", "--out", path("ds.slpd")});
    REQUIRE(r.code == 0);
    return path("ds.slpd");
  }();
  return p;
}

}  // namespace

TEST_CASE("every subcommand answers --help") {
  CHECK(run({"--help"}).code == 0);
  for (const char* sub : {"synth", "spectrogram", "stage0", "pretrain", "finetune", "eval", "ablate",
                          "gradcheck", "describe"}) {
    const auto r = run({sub, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find(sub) != std::string::npos);
  }
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"synth", "--bogus"}).code == 1);
  const auto no_out = run({"synth", "--recordings", "1"});
  CHECK(no_out.code == 1);
  CHECK(no_out.err.rfind("error: usage:", 0) == 0);
  CHECK(run({"pretrain", "--data", dataset(), "--out", path("x.ckpt")}).code == 1);
  CHECK(run({"finetune", "--data", dataset(), "--out", path("x.ckpt")}).code == 1);
}

TEST_CASE("runtime errors exit 2 with a categorized message") {
  const auto r = run({"eval", "--data", dataset(), "--checkpoint", path("missing.ckpt")});
  CHECK(r.code == 2);
  CHECK(r.err.find("error: state: checkpoint not found") != std::string::npos);
  const auto bad = path("garbage.slpd");
  std::ofstream(bad) << "nope";
  const auto g = run({"describe", "--data", bad});
  CHECK(g.code == 2);
  CHECK(g.err.find("error: format:") != std::string::npos);
}

TEST_CASE("synth and spectrogram are idempotent") {
  const auto a = run({"synth", "--recordings", "1", "--epochs", "5", "--seed", "3", "--out", path("a.slpd")});
  const auto b = run({"synth", "--recordings", "1", "--epochs", "5", "--seed", "3", "--out", path("b.slpd")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(json::parse(a.out).at("epochs") == 5);
  CHECK(slurp(path("a.slpd")) == slurp(path("b.slpd")));
  // global flags may follow the subcommand or precede it
  CHECK(run({"--seed", "3", "synth", "--recordings", "1", "--epochs", "5", "--out", path("c.slpd")}).code == 0);
  CHECK(slurp(path("a.slpd")) == slurp(path("c.slpd")));

  REQUIRE(run({"spectrogram", "--data", path("a.slpd"), "--out", path("s1.bin")}).code == 0);
  REQUIRE(run({"spectrogram", "--data", path("a.slpd"), "--out", path("s2.bin")}).code == 0);
  CHECK(slurp(path("s1.bin")) == slurp(path("s2.bin")));
  CHECK(json::parse(slurp(path("s1.bin") + ".json")).at("n") == 5);
}

TEST_CASE("stage chain through evaluation, reproducible per seed") {
  const auto ds = dataset();
  auto chain = [&](const std::string& tag) {
    const std::vector<std::string> common{"--data", ds, "--batch-size", "2", "--seed", "11", "--no-dropout"};
    auto with = [&](std::vector<std::string> head) {
      head.insert(head.end(), common.begin(), common.end());
      return head;
    };
    REQUIRE(run(with({"stage0", "--steps", "2", "--out", path(tag + "s0.ckpt")})).code == 0);
    const auto pt = run(with({"pretrain", "--steps", "2", "--init", path(tag + "s0.ckpt"), "--out",
                              path(tag + "pt.ckpt"), "--log", path(tag + "pt.csv")}));
    REQUIRE(pt.code == 0);
    CHECK(json::parse(pt.out).at("steps_run") == 2);
    REQUIRE(run(with({"finetune", "--steps", "2", "--init", path(tag + "pt.ckpt"), "--out",
                      path(tag + "ft.ckpt")})).code == 0);
    const auto ev = run({"eval", "--data", ds, "--checkpoint", path(tag + "ft.ckpt"), "--out",
                         path(tag + "metrics.json")});
    REQUIRE(ev.code == 0);
    const auto m = json::parse(ev.out);
    CHECK(m.at("accuracy").get<double>() >= 0.0);
    CHECK(m.at("per_class_f1").size() == 5);
    CHECK(json::parse(slurp(path(tag + "metrics.json"))) == m);
    return std::pair{slurp(path(tag + "pt.csv")), ev.out};
  };
  const auto first = chain("a_");
  const auto second = chain("b_");
  CHECK(first.first.rfind("# seed=11\n", 0) == 0);
  CHECK(first == second);

  const auto d = run({"describe", "--preset", "desk", "--data", ds, "--checkpoint", path("a_ft.ckpt")});
  REQUIRE(d.code == 0);
  const auto j = json::parse(d.out);
  CHECK(j.at("parameters").at("total").get<std::size_t>() > 0);
  CHECK(j.at("dataset").at("windows") == 6);
  CHECK(j.contains("checkpoint"));
}

TEST_CASE("flags override the config file, which overrides defaults") {
  const auto ds = dataset();
  const auto cfg = path("cfg.json");
  std::ofstream(cfg) << R"({"lr": 0.01, "steps": 1, "batch_size": 2})";
  REQUIRE(run({"stage0", "--data", ds, "--config", cfg, "--out", path("p1.ckpt")}).code == 0);
  auto train = xmsleep::diff::read_checkpoint_meta(path("p1.ckpt")).at("train");
  CHECK(train.at("lr") == 0.01);
  CHECK(train.at("steps") == 1);
  REQUIRE(run({"stage0", "--data", ds, "--config", cfg, "--lr", "0.002", "--out", path("p2.ckpt")}).code == 0);
  train = xmsleep::diff::read_checkpoint_meta(path("p2.ckpt")).at("train");
  CHECK(train.at("lr") == 0.002);
  CHECK(train.at("steps") == 1);
  REQUIRE(run({"stage0", "--data", ds, "--steps", "1", "--batch-size", "2", "--out", path("p3.ckpt")}).code == 0);
  CHECK(xmsleep::diff::read_checkpoint_meta(path("p3.ckpt")).at("train").at("lr") == 5e-4);
  std::ofstream(path("broken.json")) << "{";
  CHECK(run({"stage0", "--data", ds, "--config", path("broken.json"), "--out", path("p4.ckpt")}).code == 2);
}

TEST_CASE("ablation from the command line") {
  const auto r = run({"ablate", "--data", dataset(), "--variants", "TF_only,CNN_only", "--stage0-steps", "1",
                      "--pretrain-steps", "1", "--finetune-steps", "1", "--batch-size", "2", "--out",
                      path("ablate.csv")});
  REQUIRE(r.code == 0);
  const auto csv = slurp(path("ablate.csv"));
  CHECK(csv.rfind("variant,mask_ratio,accuracy,macro_f1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(run({"ablate", "--data", dataset(), "--variants", "Nope", "--out", path("n.csv")}).code == 2);
}
