#include <doctest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include "impactscan/candidates.hpp"
#include "impactscan/image_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(IMPACTSCAN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("select --mode sideways") == 2);
  CHECK(run("synth --sites -3") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("cli runs the pipeline end to end") {
  testing::TempDir dir("cli");
  const std::string w = "--workdir " + dir.path().string() + " ";
  REQUIRE(run(w + "synth --seed 7 --sites 24 --train-positives 80 --train-negatives 80") == 0);
  REQUIRE(run(w + "train") == 0);
  REQUIRE(run(w + "calibrate") == 0);
  REQUIRE(run(w + "scan --parallelism 1") == 0);
  REQUIRE(run(w + "build") == 0);
  REQUIRE(run(w + "select --mode stratified --per-bin 10") == 0);
  REQUIRE(run(w + "select --mode top-k --k 50") == 0);
  REQUIRE(run(w + "report --truth " + (dir / "world/truth.jsonl").string()) == 0);

  CHECK(fs::exists(dir / "world/resolved_config.toml"));
  CHECK(fs::exists(dir / "scores/resolved_config.toml"));
  CHECK(fs::exists(dir / "reports/bias_top_k.json"));
  CHECK(fs::exists(dir / "reports/bias_stratified.svg"));
  CHECK(fs::exists(dir / "reports/bias_stratified_verified.csv"));
  CHECK(impactscan::read_candidates(dir / "selection_top_k.jsonl").size() <= 50);

  // Parallel scan reproduces the serial outputs.
  const std::string scores4 = (dir / "scores4").string(), cands4 = (dir / "cands4.jsonl").string();
  REQUIRE(run(w + "scan --parallelism 4 --out " + scores4) == 0);
  REQUIRE(run(w + "build --scores " + scores4 + " --out " + cands4) == 0);
  CHECK(impactscan::read_file(dir / "candidates.jsonl") == impactscan::read_file(cands4));

  // Interrupted scan resumes to the same grids.
  const std::string part = (dir / "part").string();
  REQUIRE(run(w + "scan --max-observations 5 --out " + part) == 0);
  CHECK(run(w + "scan --resume --out " + part + " --stride 60") == 1);
  REQUIRE(run(w + "scan --resume --out " + part) == 0);
  for (const auto& e : fs::directory_iterator(dir / "scores/grids"))
    CHECK(impactscan::read_file(e.path()) == impactscan::read_file(fs::path(part) / "grids" / e.path().filename()));

  // The echoed config regenerates the same world.
  const std::string again = (dir / "again").string();
  REQUIRE(run(w + "--config " + (dir / "world/resolved_config.toml").string() + " synth --out " + again) == 0);
  CHECK(impactscan::read_file(dir / "world/truth.jsonl") == impactscan::read_file(fs::path(again) / "truth.jsonl"));
  CHECK(impactscan::read_file(dir / "world/labeled/labels.csv") ==
        impactscan::read_file(fs::path(again) / "labeled/labels.csv"));

  CHECK(run(w + "build --scores " + (dir / "missing").string()) == 1);
  CHECK(run(w + "export") == 0);
  CHECK(fs::exists(dir / "export/catalog_properties.csv"));
}
