#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "senpa/error.hpp"
#include "senpa/experiment.hpp"

using namespace senpa;

namespace {

const std::filesystem::path kConfigs = SENPA_SOURCE_DIR "/configs";

nlohmann::json smoke_json() {
  std::ifstream in(kConfigs / "smoke.json");
  return nlohmann::json::parse(in);
}

ExperimentConfig parse(const nlohmann::json& j) { return parse_experiment_config(j, kConfigs); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> pgm_pixels(const std::filesystem::path& p, std::size_t& h,
                                     std::size_t& w) {
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  std::vector<std::uint8_t> px(h * w);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  return px;
}

}  // namespace

TEST_CASE("shipped configs parse") {
  for (const char* name : {"zero_shot.json", "multi_sensor.json", "multi_sensor_alternating.json",
                           "smoke.json"}) {
    CAPTURE(name);
    const auto c = load_experiment_config(kConfigs / name);
    CHECK(c.sensors.size() == 3);
    CHECK_FALSE(c.rows.empty());
    CHECK(c.hash().size() == 16);
  }
  const auto zs = load_experiment_config(kConfigs / "zero_shot.json");
  CHECK(zs.rows.size() == 6);
  CHECK(zs.seeds.size() == 3);
  CHECK(zs.eval[1].name == "C4567");
  const auto ms = load_experiment_config(kConfigs / "multi_sensor.json");
  CHECK(ms.finetune.sensor_mode == SensorMode::Random);
  CHECK(ms.eval[0].name == "S_rand");
}

TEST_CASE("config hash tracks content") {
  const auto j = smoke_json();
  CHECK(parse(j).hash() == parse(j).hash());
  auto k = j;
  k["finetune"]["lr0"] = 0.002;
  CHECK(parse(k).hash() != parse(j).hash());
}

TEST_CASE("config errors") {
  const auto base = smoke_json();
  auto expect_error = [&](const std::function<void(nlohmann::json&)>& edit) {
    auto j = base;
    edit(j);
    CHECK_THROWS_AS(parse(j), ConfigError);
  };
  expect_error([](auto& j) { j["kind"] = "few_shot"; });
  expect_error([](auto& j) { j["seeds"] = nlohmann::json::array(); });
  expect_error([](auto& j) { j["sensors"]["A"] = "missing.json"; });
  expect_error([](auto& j) { j["experiment"]["train"][0]["sensor"] = "Z"; });
  expect_error([](auto& j) { j["experiment"]["train"][0]["channels"] = {0, 1, 2, 9}; });
  expect_error([](auto& j) { j["experiment"]["train"][0]["channels"] = {0, 1, 2}; });
  expect_error([](auto& j) { j["experiment"]["rows"] = {"spe3"}; });
  expect_error([](auto& j) { j["data"]["size"] = 48; });
  expect_error([](auto& j) { j["data"]["classes"] = 9; });
  expect_error([](auto& j) { j["model"]["enc_heads"] = 5; });
  expect_error([](auto& j) { j["pretrain"]["crop"] = 16; });
  expect_error([](auto& j) { j["experiment"]["train"].push_back(j["experiment"]["train"][0]); });
  expect_error([](auto& j) { j["data"]["pretrain_sensors"] = {"Q"}; });
  expect_error([](auto& j) { j["finetune"]["sensor_mode"] = "sometimes"; });
  CHECK_THROWS_AS(load_experiment_config(kConfigs / "absent.json"), ConfigError);
}

TEST_CASE("row identifiers") {
  CHECK(parse_row("base_scratch").pretrained == false);
  CHECK(parse_row("base").mode == EncodingMode::Base);
  CHECK(parse_row("spe1_ssa").mode == EncodingMode::Spe1);
  CHECK(parse_row("spe1_ssa").ssa);
  CHECK_FALSE(parse_row("spe2").ssa);
  CHECK_THROWS_AS(parse_row("spe2+ssa"), ConfigError);
}

TEST_CASE("mean and sample standard deviation") {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std({0.7}).second == 0.0);
}

TEST_CASE("random arrangements draw sensors with equal probability") {
  const auto c = load_experiment_config(kConfigs / "multi_sensor.json");
  const Arrangement& rnd = c.eval[0];
  REQUIRE_FALSE(rnd.random_from.empty());
  std::size_t first = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto d = draw_channels(rnd, c.sensors, scene_seed(7, kValSplit, i));
    first += d.sensor == rnd.random_from[0];
    CHECK(d.channels.size() == 4);
    CHECK(std::set<std::size_t>(d.channels.begin(), d.channels.end()).size() == 4);
  }
  CHECK(std::abs(first / 10000.0 - 0.5) <= 0.03);
  // Deterministic in the scene seed; fixed arrangements pass through.
  const auto a = draw_channels(rnd, c.sensors, 123), b = draw_channels(rnd, c.sensors, 123);
  CHECK(a.channels == b.channels);
  const auto fixed = draw_channels(c.eval[1], c.sensors, 5);
  CHECK(fixed.sensor == c.eval[1].sensor);
  CHECK(fixed.channels == c.eval[1].channels);
}

TEST_CASE("scene splits do not share seeds") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t split : {1, 2, 3, 4})
    for (std::size_t i = 0; i < 200; ++i) CHECK(seen.insert(scene_seed(7, split, i)).second);
}

TEST_CASE("rendered arrangements carry the sensor's parameters") {
  const auto c = parse(smoke_json());
  const auto set = render_arrangement(c, c.eval[1], kFinetuneSplit, 2);
  REQUIRE(set.size() == 2);
  const auto& spec = c.sensors.at("C");
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(set[0].params[k].srf == spec.channels[4 + k].srf);
    CHECK(set[0].params[k].gsd_m == static_cast<float>(spec.channels[4 + k].gsd_m));
  }
  CHECK(set[0].labels.has_value());
  CHECK(set[0].height == 32);
  const auto again = render_arrangement(c, c.eval[1], kFinetuneSplit, 2);
  CHECK(again == set);
  const auto pre = render_pretrain_set(c, kPretrainSplit, 3);
  CHECK(pre[0].channels() == c.sensors.at("A").size());
  CHECK(pre[2].channels() == c.sensors.at("C").size());
}

TEST_CASE("smoke experiment: table shape, val column and reruns") {
  const auto c = parse(smoke_json());
  const auto dir1 = test::scratch_dir("experiment_run1");
  const auto dir2 = test::scratch_dir("experiment_run2");
  const auto r = run_zero_shot(c, dir1, nullptr);
  REQUIRE(r.cells.size() == 2);
  for (const auto& cell : r.cells) {
    // The first evaluation arrangement is the training arrangement.
    CHECK(cell.eval_iou[0] == cell.val_iou);
    for (double v : cell.eval_iou) CHECK((v >= 0.0 && v <= 1.0));
  }
  run_zero_shot(c, dir2, nullptr);
  CHECK(slurp(dir1 / "results.csv") == slurp(dir2 / "results.csv"));
  CHECK(slurp(dir1 / "results_per_seed.csv") == slurp(dir2 / "results_per_seed.csv"));

  std::istringstream table(slurp(dir1 / "results.csv"));
  std::string header, line;
  std::getline(table, header);
  CHECK(header ==
        "row,backbone,pretrained,sensor_parameter_encoding,ssa,val_A0123_mean,val_A0123_std,"
        "A0123_mean,A0123_std,C4567_mean,C4567_std,C0123_mean,C0123_std,B0123_mean,B0123_std,"
        "seeds,config_hash");
  std::size_t rows = 0;
  while (std::getline(table, line)) {
    ++rows;
    CHECK(line.ends_with("," + c.hash()));
  }
  CHECK(rows == 2);
  CHECK_THROWS_AS(run_multi_sensor(c, std::nullopt, nullptr), ConfigError);
}

TEST_CASE("figure emission matches the mask record") {
  const auto c = parse(smoke_json());
  const SenpaMae<float> model(c.model, 1);
  const auto sample = render_arrangement(c, c.train[0], kValSplit, 1)[0];
  const auto dir = test::scratch_dir("experiment_figures");
  emit_figures(model, sample, 42, dir);

  std::vector<int> masked;
  {
    std::ifstream csv(dir / "mask.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "token,channel,row,col,masked");
    while (std::getline(csv, line)) masked.push_back(line.back() - '0');
  }
  REQUIRE(masked.size() == 4 * 16);
  const std::size_t g = 4, p = 8;
  for (std::size_t ch = 0; ch < 4; ++ch) {
    for (const char* kind : {"mask", "recon", "target"}) {
      std::size_t h = 0, w = 0;
      pgm_pixels(dir / ("fig_c" + std::to_string(ch) + "_" + kind + ".pgm"), h, w);
      CHECK(h == 32);
      CHECK(w == 32);
    }
    std::size_t h = 0, w = 0;
    const auto px = pgm_pixels(dir / ("fig_c" + std::to_string(ch) + "_mask.pgm"), h, w);
    std::size_t mismatches = 0;
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const std::size_t token = ch * g * g + (y / p) * g + x / p;
        const bool white = px[y * 32 + x] == 255;
        const bool black = px[y * 32 + x] == 0;
        mismatches += masked[token] ? !white : !black;
      }
    CHECK(mismatches == 0);
    std::ifstream srf(dir / ("fig_c" + std::to_string(ch) + "_srf.csv"));
    std::size_t lines = 0;
    for (std::string line; std::getline(srf, line);) ++lines;
    CHECK(lines == kSrfLength + 1);
  }
}
