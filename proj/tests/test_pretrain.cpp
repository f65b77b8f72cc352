#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "senpa/error.hpp"
#include "senpa/pretrain.hpp"

using namespace senpa;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.d_emb = 16;
  c.patch = 8;
  c.image_size = 32;
  c.enc_layers = 2;
  c.enc_heads = 2;
  c.dec_layers = 1;
  c.dec_heads = 2;
  c.mlp_depth = 2;
  return c;
}

PretrainConfig tiny_run() {
  PretrainConfig c;
  c.epochs = 4;
  c.warmup_epochs = 1;
  c.batch = 4;
  c.crop = 32;
  c.channels_per_sample = 3;
  c.val_items = 4;
  c.recon_dumps = 1;
  c.seed = 9;
  return c;
}

std::vector<MultispectralSample> toy_set(std::size_t n, std::uint64_t base, std::size_t size = 32) {
  std::vector<MultispectralSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(test::toy_sample(base + i, size, 4));
  return out;
}

std::vector<float> flat(const nn::ParameterSet<float>& p) {
  std::vector<float> v;
  for (const auto& it : p.items()) v.insert(v.end(), it.value.values().begin(), it.value.values().end());
  return v;
}

}  // namespace

TEST_CASE("batch assembly") {
  const auto data = toy_set(3, 1);
  PretrainConfig cfg = tiny_run();
  cfg.channels_per_sample = 4;
  cfg.augment = false;

  SUBCASE("all channels, full crop, no augmentation keeps the pixels") {
    Rng rng(1);
    const std::vector<std::size_t> idx{2};
    const auto batch = assemble_batch(data, idx, cfg, rng);
    REQUIRE(batch.size() == 1);
    // Channels come in random order; each one is a whole channel of the source.
    for (std::size_t c = 0; c < 4; ++c) {
      bool found = false;
      for (std::size_t k = 0; k < 4; ++k)
        found |= std::ranges::equal(batch[0].channel(c), data[2].channel(k)) &&
                 batch[0].params[c] == data[2].params[k];
      CHECK(found);
    }
    CHECK(batch[0].labels == data[2].labels);
  }
  SUBCASE("seeded composition") {
    cfg.augment = true;
    cfg.crop = 16;
    cfg.channels_per_sample = 2;
    const std::vector<std::size_t> idx{0, 1, 2, 0};
    Rng a(5), b(5);
    const auto x = assemble_batch(data, idx, cfg, a);
    const auto y = assemble_batch(data, idx, cfg, b);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(x[i] == y[i]);
      CHECK(x[i].height == 16);
      CHECK(x[i].channels() == 2);
    }
  }
  SUBCASE("channel frequency") {
    MultispectralSample eight;
    {
      SceneOptions opts;
      opts.amplitude = 0.01;
      const auto g = generate_scene(3, 32, 32, 4, opts);
      const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
      eight = render_sample(g.scene, g.mask, test::toy_sensor(8), all);
    }
    // Tag each channel by a distinct first pixel so draws can be identified.
    for (std::size_t c = 0; c < 8; ++c) eight.channel(c)[0] = static_cast<float>(c);
    const std::vector<MultispectralSample> one{eight};
    cfg.channels_per_sample = 4;
    cfg.crop = 32;
    std::vector<std::size_t> hits(8, 0);
    Rng rng(7);
    const std::vector<std::size_t> idx{0};
    for (int d = 0; d < 1000; ++d)
      for (const auto& item : assemble_batch(one, idx, cfg, rng))
        for (std::size_t c = 0; c < 4; ++c) ++hits[static_cast<std::size_t>(item.channel(c)[0])];
    for (std::size_t c = 0; c < 8; ++c) {
      CAPTURE(c);
      CHECK(std::abs(hits[c] / 1000.0 - 0.5) <= 0.05);
    }
  }
  SUBCASE("errors") {
    Rng rng(1);
    const std::vector<std::size_t> idx{0};
    cfg.crop = 40;
    CHECK_THROWS_AS(assemble_batch(data, idx, cfg, rng), ConfigError);
    cfg.crop = 32;
    cfg.channels_per_sample = 5;
    CHECK_THROWS_AS(assemble_batch(data, idx, cfg, rng), ConfigError);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto train = toy_set(8, 10);
  const auto val = toy_set(2, 50);
  SenpaMae<float> model(tiny_model(), 1);
  const auto before = flat(model.params());
  auto cfg = tiny_run();
  cfg.epochs = 1;
  cfg.lr0 = 0.0;
  const auto r = pretrain(model, train, val, cfg);
  CHECK(flat(model.params()) == before);
  CHECK(r.history.size() == 1);
}

TEST_CASE("validation does not touch optimizer state") {
  const auto val = toy_set(2, 50);
  SenpaMae<float> model(tiny_model(), 1);
  const auto before = flat(model.params());
  const auto items = validation_items(val, tiny_run());
  const double a = validation_loss(model, items, 3);
  const double b = validation_loss(model, items, 3);
  CHECK(a == b);
  CHECK(flat(model.params()) == before);
  for (const auto& p : model.params().items()) {
    CHECK_FALSE(p.value.has_grad());
    CHECK(std::ranges::all_of(p.m, [](float x) { return x == 0.0f; }));
  }
  CHECK(model.params().step() == 0);
}

TEST_CASE("training lowers the loss and writes its outputs") {
  const auto dir = test::scratch_dir("pretrain_out");
  const auto train = toy_set(12, 10);
  const auto val = toy_set(3, 60);
  SenpaMae<float> model(tiny_model(), 2);
  PretrainOutputs out;
  out.dir = dir;
  out.config = {{"model", tiny_model()}};
  auto cfg = tiny_run();
  cfg.epochs = 6;
  const auto r = pretrain(model, train, val, cfg, out);
  REQUIRE(r.history.size() == 6);
  CHECK(r.history.back().val_loss < r.history.front().val_loss);
  CHECK(r.history.back().step == 18);
  CHECK(std::filesystem::exists(dir / "best.spck"));
  CHECK(std::filesystem::exists(dir / "last.spck"));
  CHECK(std::filesystem::exists(dir / "recon" / "val0_c0_recon.pgm"));
  CHECK(std::filesystem::exists(dir / "recon" / "val0_c2_mask.pgm"));
  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,step,lr,train_masked_mae,val_masked_mae,wall_s");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 6);
  const auto best = load_checkpoint(dir / "best.spck");
  CHECK(best.meta.at("best_val").get<double>() == r.best_val);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const auto train = toy_set(10, 10);
  const auto val = toy_set(2, 60);
  const auto cfg = tiny_run();

  SenpaMae<float> full(tiny_model(), 3);
  const auto whole = pretrain(full, train, val, cfg);

  const auto dir = test::scratch_dir("pretrain_resume");
  PretrainOutputs first;
  first.dir = dir;
  first.stop_after = 2;
  SenpaMae<float> part(tiny_model(), 3);
  const auto head = pretrain(part, train, val, cfg, first);
  CHECK(head.history.size() == 2);

  SenpaMae<float> resumed(tiny_model(), 77);  // different init, overwritten by the checkpoint
  const auto ckpt = load_checkpoint(dir / "last.spck");
  const auto tail = pretrain(resumed, train, val, cfg, {}, &ckpt);
  REQUIRE(tail.history.size() == whole.history.size());
  for (std::size_t e = 0; e < whole.history.size(); ++e) {
    CHECK(tail.history[e].train_loss == whole.history[e].train_loss);
    CHECK(tail.history[e].val_loss == whole.history[e].val_loss);
    CHECK(tail.history[e].lr == whole.history[e].lr);
  }
  CHECK(flat(resumed.params()) == flat(full.params()));
  CHECK(resumed.params().step() == full.params().step());
}

TEST_CASE("training is a function of data, config and seed") {
  const auto train = toy_set(6, 10);
  const auto val = toy_set(2, 60);
  auto cfg = tiny_run();
  cfg.epochs = 2;
  SenpaMae<float> a(tiny_model(), 4), b(tiny_model(), 4);
  pretrain(a, train, val, cfg);
  pretrain(b, train, val, cfg);
  CHECK(flat(a.params()) == flat(b.params()));
}

TEST_CASE("divergence is reported") {
  const auto train = toy_set(4, 10);
  const auto val = toy_set(1, 60);
  SenpaMae<float> model(tiny_model(), 5);
  model.params().at("head.bias").value.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = tiny_run();
  cfg.epochs = 1;
  CHECK_THROWS_AS(pretrain(model, train, val, cfg), DivergenceError);

  SenpaMae<float> ok(tiny_model(), 5);
  cfg.crop = 16;
  CHECK_THROWS_AS(pretrain(ok, train, val, cfg), ConfigError);
}

TEST_CASE("pretrain config JSON") {
  auto cfg = tiny_run();
  cfg.augmentation.p_mix = 0.5;
  const nlohmann::json j = cfg;
  const auto back = j.get<PretrainConfig>();
  CHECK(back.epochs == 4);
  CHECK(back.augmentation.p_mix == 0.5);
  CHECK(back.seed == 9);
  CHECK_THROWS_AS((nlohmann::json{{"warmup_epochs", 5}, {"epochs", 2}}.get<PretrainConfig>()),
                  ConfigError);
}
