#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "avfdae/pipeline.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("AVFDAE_CLI");
  return p ? p : "avfdae";
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run run(const testutil::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && '" + cli() + "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Small enough for a test: 30 patients, level 3 and a narrow network.
const std::string kSmall =
    "--cohort coh --level 3 --epochs 2 --runs 3 --set pretrain.widths=[16,8] --set pretrain.test_fraction=0.5 ";

}  // namespace

TEST_CASE("synth writes a cohort and refuses to overwrite", "[cli]") {
  testutil::TempDir dir;
  const auto r = run(dir, "synth --out a --n-patients 4");
  REQUIRE(r.code == 0);
  int wavs = 0;
  for (const auto& e : fs::directory_iterator(dir / "a/audio")) wavs += e.path().extension() == ".wav";
  CHECK(wavs == 8);
  const auto csv = slurp(dir / "a/metadata.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  CHECK(run(dir, "synth --out a --n-patients 4").code == 3);
  REQUIRE(run(dir, "synth --out b --n-patients 4").code == 0);
  CHECK(slurp(dir / "b/metadata.csv") == csv);
  CHECK(slurp(dir / "b/synth.json") == slurp(dir / "a/synth.json"));
  REQUIRE(run(dir, "--force synth --out a --n-patients 4 --synth-seed 5").code == 0);
  CHECK(slurp(dir / "a/metadata.csv") != csv);

  const auto meta = nlohmann::json::parse(slurp(dir / "b/synth.json"));
  CHECK(meta.contains("config_hash"));
  CHECK(meta["config"]["n_patients"] == 4);
}

TEST_CASE("Configuration errors exit with code 2 before any work", "[cli]") {
  testutil::TempDir dir;
  auto r = run(dir, "--level 4 pretrain");
  CHECK(r.code == 2);
  CHECK(r.err.find("level") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "work"));
  CHECK(run(dir, "--set feature.view=spectrogram pretrain").code == 2);
  CHECK(run(dir, "--set nope.key=1 pretrain").code == 2);
  CHECK(run(dir, "--set novalue pretrain").code == 2);
  CHECK(run(dir, "frobnicate").code == 2);
  CHECK(run(dir, "run-matrix --preset table9").code == 2);
  {
    std::ofstream(dir / "bad.json") << "{\"paths\": {\"cohort\": 3}}";
  }
  CHECK(run(dir, "-c bad.json preprocess").code == 2);
  CHECK(run(dir, "--help").code == 0);
}

TEST_CASE("Missing data exits with code 3", "[cli]") {
  testutil::TempDir dir;
  CHECK(run(dir, "--cohort nowhere preprocess").code == 3);
  REQUIRE(run(dir, "synth --out coh --n-patients 30").code == 0);
  const auto r = run(dir, kSmall + "train-downstream");
  CHECK(r.code == 3);
  CHECK(r.err.find("missing checkpoint") != std::string::npos);
  CHECK(run(dir, kSmall + "report --preset table5d").code == 3);
}

TEST_CASE("Pipeline stages are deterministic", "[cli]") {
  testutil::TempDir dir;
  REQUIRE(run(dir, "synth --out coh --n-patients 30").code == 0);
  const std::string w = kSmall + "--workdir w ";

  REQUIRE(run(dir, w + "preprocess").code == 0);
  const auto pre = slurp(dir / "w/preprocessed/preprocess.json");
  const auto wav = slurp(dir / "w/preprocessed/P007_site3.wav");
  REQUIRE(run(dir, w + "preprocess").code == 0);
  CHECK(slurp(dir / "w/preprocessed/preprocess.json") == pre);
  CHECK(slurp(dir / "w/preprocessed/P007_site3.wav") == wav);

  const auto aug = run(dir, w + "augment --no-audio");
  REQUIRE(aug.code == 0);
  CHECK(aug.out.find("840 noisy variants from 60 recordings") != std::string::npos);

  REQUIRE(run(dir, w + "pretrain").code == 0);
  CHECK(run(dir, w + "pretrain").code == 3);
  fs::path loss;
  for (const auto& e : fs::directory_iterator(dir / "w/checkpoints"))
    if (e.path().string().ends_with(".loss.json")) loss = dir / "w/checkpoints" / e.path().filename();
  REQUIRE_FALSE(loss.empty());
  const auto curve = slurp(loss);
  const auto j = nlohmann::json::parse(curve);
  CHECK(j["loss_curve"].size() == 2);
  CHECK(j.contains("config_hash"));
  CHECK(j.contains("seed"));
  REQUIRE(run(dir, w + "--force pretrain").code == 0);
  CHECK(slurp(loss) == curve);

  REQUIRE(run(dir, w + "extract").code == 0);
  fs::path latents;
  for (const auto& e : fs::directory_iterator(dir / "w/latents"))
    if (e.path().extension() == ".csv") latents = e.path();
  const auto csv = slurp(latents);
  REQUIRE(run(dir, w + "extract").code == 0);
  CHECK(slurp(latents) == csv);

  const auto a = run(dir, w + "train-downstream");
  REQUIRE(a.code == 0);
  CHECK(a.out.find("| Accuracy") != std::string::npos);
  fs::path report;
  for (const auto& e : fs::directory_iterator(dir / "w/reports")) report = e.path();
  const auto first = slurp(report);
  CHECK(nlohmann::json::parse(first).contains("config_hash"));
  const auto b = run(dir, w + "train-downstream");
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(report) == first);
}

TEST_CASE("Matrix runner writes a manifest and re-renders the summary", "[cli]") {
  testutil::TempDir dir;
  REQUIRE(run(dir, "synth --out coh --n-patients 30").code == 0);
  const auto r = run(dir, kSmall + "--workdir w run-matrix --preset table5d --train");
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(slurp(dir / "w/reports/table5d/manifest.json"));
  REQUIRE(manifest["cells"].size() == 3);
  for (const auto& cell : manifest["cells"]) CHECK(cell["status"] == "ok");
  CHECK(r.out.find("dim = 5") != std::string::npos);
  const auto summary = slurp(dir / "w/reports/table5d/summary.md");
  const auto again = run(dir, kSmall + "--workdir w report --preset table5d");
  REQUIRE(again.code == 0);
  CHECK(again.out == summary);
  CHECK(slurp(dir / "w/reports/table5d/summary.md") == summary);

  // A fresh workdir has no checkpoints and training is not allowed.
  const auto missing = run(dir, kSmall + "--workdir fresh run-matrix --preset table5b");
  CHECK(missing.code == 3);
  CHECK(missing.err.find("cell 'site2'") != std::string::npos);
  const auto m2 = nlohmann::json::parse(slurp(dir / "fresh/reports/table5b/manifest.json"));
  for (const auto& cell : m2["cells"]) CHECK(cell["status"] == "failed");
}

TEST_CASE("Pretraining seed ignores where the cohort lives", "[cli]") {
  avfdae::PipelineConfig a, b;
  a.cohort = "coh";
  b.cohort = "/elsewhere/coh";
  CHECK(avfdae::pretrain_seed(a) == avfdae::pretrain_seed(b));
  CHECK(avfdae::pretrain_hash(a) != avfdae::pretrain_hash(b));
  b.seed = 2;
  CHECK(avfdae::pretrain_seed(a) != avfdae::pretrain_seed(b));
}
