#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "senpa/checkpoint.hpp"

namespace fs = std::filesystem;
namespace test = senpa::test;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(SENPA_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// CSV text with the named column removed (wall-clock times differ between runs).
std::string drop_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line, out;
  std::getline(in, line);
  std::vector<std::string> head;
  std::stringstream hs(line);
  for (std::string f; std::getline(hs, f, ',');) head.push_back(f);
  const auto skip = static_cast<std::size_t>(std::find(head.begin(), head.end(), column) - head.begin());
  in.clear();
  in.seekg(0);
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::size_t i = 0;
    for (std::string f; std::getline(ls, f, ','); ++i)
      if (i != skip) out += f + ",";
    out += "\n";
  }
  return out;
}

/// smoke.json with absolute sensor paths, written into `dir`.
fs::path smoke_config(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit = {}) {
  std::ifstream in(SENPA_SOURCE_DIR "/configs/smoke.json");
  auto j = nlohmann::json::parse(in);
  for (auto& [name, value] : j["sensors"].items())
    value = (test::sensor_dir() / (name + ".json")).string();
  if (edit) edit(j);
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

/// Checkpoint payloads compared bitwise; the metadata carries wall-clock times.
bool same_weights(const fs::path& a, const fs::path& b) {
  const auto x = senpa::load_checkpoint(a), y = senpa::load_checkpoint(b);
  if (x.tensors.size() != y.tensors.size() || x.optimizer_step != y.optimizer_step) return false;
  for (std::size_t i = 0; i < x.tensors.size(); ++i) {
    const auto &p = x.tensors[i], &q = y.tensors[i];
    if (p.name != q.name || p.value != q.value || p.m != q.m || p.v != q.v) return false;
  }
  return x.config == y.config;
}

}  // namespace

TEST_CASE("exit codes") {
  const auto dir = test::scratch_dir("cli_codes");
  const auto log = dir / "log.txt";
  CHECK(run("--help", log) == 0);
  CHECK(run("", log) == 2);
  CHECK(run("no-such-command", log) == 2);
  CHECK(run("gen-data --config " + (dir / "absent.json").string() + " --out x", log) == 2);

  const auto bad = smoke_config(dir, [](auto& j) { j["model"]["enc_heads"] = 5; });
  CHECK(run("gen-data --config " + bad.string() + " --out " + (dir / "d").string(), log) == 2);
  CHECK(slurp(log).find("configuration error") != std::string::npos);

  // Corrupt dataset file: format errors share the configuration exit code.
  std::ofstream(dir / "junk.spms") << "not a dataset";
  const auto good = smoke_config(dir);
  CHECK(run("pretrain --config " + good.string() + " --data " + (dir / "junk.spms").string() +
                " --out " + (dir / "p").string(),
            log) == 2);

  // A huge learning rate without warmup blows the weights up on the first step.
  const auto hot = smoke_config(dir, [](auto& j) {
    j["pretrain"]["lr0"] = 1e30;
    j["pretrain"]["warmup_epochs"] = 0;
  });
  REQUIRE(run("gen-data --config " + hot.string() + " --out " + (dir / "d").string(), log) == 0);
  CHECK(run("pretrain --config " + hot.string() + " --data " + (dir / "d/pretrain.spms").string() +
                " --val-data " + (dir / "d/pretrain_val.spms").string() + " --out " +
                (dir / "p").string(),
            log) == 3);
  CHECK(slurp(log).find("divergence") != std::string::npos);
}

TEST_CASE("reruns of every job produce identical files") {
  const auto root = test::scratch_dir("cli_rerun");
  const auto config = smoke_config(root);
  std::vector<fs::path> runs{root / "run1", root / "run2"};
  for (const auto& r : runs) {
    const auto log = root / "log.txt";
    const std::string cfg = " --config " + config.string();
    REQUIRE(run("--seed 5 --threads 1 gen-data" + cfg + " --out " + (r / "data").string(), log) == 0);
    REQUIRE(run("--seed 5 pretrain" + cfg + " --data " + (r / "data/pretrain.spms").string() +
                    " --val-data " + (r / "data/pretrain_val.spms").string() + " --out " +
                    (r / "pre").string(),
                log) == 0);
    REQUIRE(run("--seed 5 finetune" + cfg + " --init " + (r / "pre/last.spck").string() +
                    " --data " + (r / "data/finetune_A0123.spms").string() + " --val-data " +
                    (r / "data/val_A0123.spms").string() + " --out " + (r / "ft").string(),
                log) == 0);
    REQUIRE(run("eval --checkpoint " + (r / "ft/finetuned.spck").string() + " --data " +
                    (r / "data/eval_C4567.spms").string() + " --maps 1 --out " +
                    (r / "ev").string(),
                log) == 0);
    REQUIRE(run("eval --checkpoint " + (r / "ft/finetuned.spck").string() + " --data " +
                    (r / "data/eval_C4567.spms").string() + " --sensor " +
                    (test::sensor_dir() / "B.json").string() + " --channels 0,1,2,3 --out " +
                    (r / "ev_b").string(),
                log) == 0);
    REQUIRE(run("emit-figures --checkpoint " + (r / "pre/last.spck").string() + " --data " +
                    (r / "data/pretrain_val.spms").string() + " --index 1 --mask-seed 3 --out " +
                    (r / "fig").string(),
                log) == 0);
  }
  const fs::path a = runs[0], b = runs[1];
  for (const char* f : {"data/pretrain.spms", "data/finetune_A0123.spms", "data/eval_B0123.spms",
                        "data/manifest.csv", "ev/eval.csv", "ev/pred_0.ppm", "ev_b/eval.csv",
                        "fig/mask.csv", "fig/fig_c0_recon.pgm", "fig/fig_c2_srf.csv",
                        "ft/finetuned.spck"}) {
    CAPTURE(f);
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  for (const char* f : {"pre/metrics.csv", "ft/metrics.csv"}) {
    CAPTURE(f);
    CHECK(drop_column(slurp(a / f), "wall_s") == drop_column(slurp(b / f), "wall_s"));
  }
  CHECK(same_weights(a / "pre/last.spck", b / "pre/last.spck"));
  CHECK(slurp(a / "ev/eval.csv").starts_with("metric,value\nmicro_iou,"));

  // A different seed renders different scenes.
  const auto log = root / "log.txt";
  REQUIRE(run("--seed 6 gen-data --config " + config.string() + " --out " +
                  (root / "other").string(),
              log) == 0);
  CHECK(slurp(root / "other/pretrain.spms") != slurp(a / "data/pretrain.spms"));
}

TEST_CASE("pretraining resumes through the CLI") {
  const auto root = test::scratch_dir("cli_resume");
  const auto config = smoke_config(root, [](auto& j) { j["pretrain"]["epochs"] = 3; });
  const auto log = root / "log.txt";
  const std::string cfg = " --config " + config.string();
  REQUIRE(run("gen-data" + cfg + " --out " + (root / "d").string(), log) == 0);
  const std::string data = " --data " + (root / "d/pretrain.spms").string();
  REQUIRE(run("pretrain" + cfg + data + " --out " + (root / "full").string(), log) == 0);
  REQUIRE(run("pretrain" + cfg + data + " --stop-after 1 --out " + (root / "part").string(), log) == 0);
  REQUIRE(run("pretrain" + cfg + data + " --resume " + (root / "part/last.spck").string() +
                  " --out " + (root / "part").string(),
              log) == 0);
  CHECK(same_weights(root / "full/last.spck", root / "part/last.spck"));
  CHECK(drop_column(slurp(root / "full/metrics.csv"), "wall_s") ==
        drop_column(slurp(root / "part/metrics.csv"), "wall_s"));
}

TEST_CASE("experiment tables through the CLI") {
  const auto root = test::scratch_dir("cli_table");
  const auto config = smoke_config(root, [](auto& j) { j["experiment"]["rows"] = {"spe2"}; });
  const auto log = root / "log.txt";
  REQUIRE(run("run-zero-shot --config " + config.string() + " --out " + (root / "a").string(),
              log) == 0);
  const std::string stdout_table = slurp(log).substr(slurp(log).find("row,backbone"));
  CHECK(stdout_table == slurp(root / "a/results.csv"));
  REQUIRE(run("run-zero-shot --config " + config.string() + " --out " + (root / "b").string(),
              log) == 0);
  CHECK(slurp(root / "a/results.csv") == slurp(root / "b/results.csv"));
  CHECK(run("run-multi-sensor --config " + config.string() + " --out " + (root / "c").string(),
            log) == 2);
}
