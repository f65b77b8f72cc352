#include "senpa/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "senpa/error.hpp"
#include "senpa/image_io.hpp"

namespace senpa {

namespace {

constexpr std::uint64_t kValStream = 0x76616cULL;
constexpr std::uint64_t kShuffleStream = 0x7368756666ULL;

}  // namespace

void PretrainConfig::validate() const {
  require(epochs >= 1, "pretrain epochs must be at least 1");
  require(warmup_epochs <= epochs, "warmup_epochs exceeds epochs");
  require(lr0 >= 0.0, "lr0 must be non-negative");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(batch >= 1, "batch must be at least 1");
  require(crop >= 1, "crop must be positive");
  require(channels_per_sample >= 1, "channels_per_sample must be at least 1");
  require(val_items >= 1, "val_items must be at least 1");
  augmentation.validate();
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"lr0", c.lr0},
       {"weight_decay", c.weight_decay},
       {"batch", c.batch},
       {"crop", c.crop},
       {"channels_per_sample", c.channels_per_sample},
       {"augment", c.augment},
       {"augmentation", c.augmentation},
       {"seed", c.seed},
       {"val_items", c.val_items},
       {"recon_dumps", c.recon_dumps}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c = PretrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch = j.value("batch", c.batch);
  c.crop = j.value("crop", c.crop);
  c.channels_per_sample = j.value("channels_per_sample", c.channels_per_sample);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augmentation")) c.augmentation = j.at("augmentation").get<AugmentConfig>();
  c.seed = j.value("seed", c.seed);
  c.val_items = j.value("val_items", c.val_items);
  c.recon_dumps = j.value("recon_dumps", c.recon_dumps);
  c.validate();
}

std::vector<MultispectralSample> assemble_batch(std::span<const MultispectralSample> dataset,
                                                std::span<const std::size_t> sample_indices,
                                                const PretrainConfig& config, Rng& rng) {
  std::vector<MultispectralSample> batch;
  batch.reserve(sample_indices.size());
  for (std::size_t idx : sample_indices) {
    require(idx < dataset.size(), "batch index out of range");
    const MultispectralSample& src = dataset[idx];
    require(src.channels() >= config.channels_per_sample,
            "sample has " + std::to_string(src.channels()) + " channels, fewer than channels_per_sample");
    require(src.height >= config.crop && src.width >= config.crop,
            "crop " + std::to_string(config.crop) + " is larger than the " +
                std::to_string(src.height) + "x" + std::to_string(src.width) + " source sample");
    const auto channels = sample_distinct(rng, src.channels(), config.channels_per_sample);
    const std::size_t y0 = uniform_index(rng, src.height - config.crop + 1);
    const std::size_t x0 = uniform_index(rng, src.width - config.crop + 1);
    MultispectralSample item =
        src.select_channels(channels).crop(y0, x0, config.crop, config.crop);
    if (config.augment) item = augment(item, config.augmentation, rng);
    batch.push_back(std::move(item));
  }
  return batch;
}

std::vector<MultispectralSample> validation_items(std::span<const MultispectralSample> val,
                                                  const PretrainConfig& config) {
  require(!val.empty(), "validation needs at least one held-out sample");
  PretrainConfig plain = config;
  plain.augment = false;
  std::vector<MultispectralSample> items;
  for (std::size_t i = 0; i < config.val_items; ++i) {
    Rng rng(derive_seed(config.seed, kValStream, i));
    const std::size_t idx = i % val.size();
    auto one = assemble_batch(val, std::span<const std::size_t>(&idx, 1), plain, rng);
    items.push_back(std::move(one.front()));
  }
  return items;
}

template <typename T>
double validation_loss(const SenpaMae<T>& model, std::span<const MultispectralSample> items,
                       std::uint64_t seed) {
  nn::NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Rng rng(derive_seed(seed, kValStream + 1, i));
    const auto out = model.forward_mae(items[i], rng);
    total += static_cast<double>(masked_mae_loss(out.reconstruction, out.target, out.mask).item());
  }
  return total / static_cast<double>(items.size());
}

template <typename T>
void dump_reconstruction(const SenpaMae<T>& model, const MultispectralSample& sample, Rng& rng,
                         const std::filesystem::path& dir, const std::string& stem) {
  nn::NoGradGuard no_grad;
  const auto out = model.forward_mae(sample, rng);
  const std::size_t c = sample.channels();
  const std::size_t p = model.config().patch;
  const std::size_t pp = p * p;
  const std::size_t n = out.mask.tokens;
  // Masked tokens show the reconstruction, visible ones stay black; the mask
  // image is white exactly where tokens were hidden.
  std::vector<T> recon(n * pp, T(0));
  std::vector<T> mask(n * pp, T(0));
  for (std::size_t t : out.mask.masked)
    for (std::size_t q = 0; q < pp; ++q) {
      recon[t * pp + q] = out.reconstruction.at(t, q);
      mask[t * pp + q] = T(1);
    }
  const auto recon_img = unpatchify<T>(recon, c, sample.height, sample.width, p);
  const auto mask_img = unpatchify<T>(mask, c, sample.height, sample.width, p);
  const std::size_t plane = sample.plane();
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<float> r(plane), m(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      r[i] = static_cast<float>(recon_img[ch * plane + i]);
      m[i] = static_cast<float>(mask_img[ch * plane + i]);
    }
    const std::string base = stem + "_c" + std::to_string(ch);
    write_pgm(dir / (base + "_mask.pgm"), m, sample.height, sample.width);
    write_pgm(dir / (base + "_recon.pgm"), r, sample.height, sample.width);
    write_pgm(dir / (base + "_target.pgm"), sample.channel(ch), sample.height, sample.width);
  }
}

namespace {

void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "epoch,step,lr,train_masked_mae,val_masked_mae,wall_s\n";
  for (const auto& m : history)
    out << csv_row({std::to_string(m.epoch), std::to_string(m.step), format_number(m.lr),
                    format_number(m.train_loss), format_number(m.val_loss),
                    format_number(m.wall_s)})
        << '\n';
}

nlohmann::json history_json(const std::vector<EpochMetrics>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : history)
    arr.push_back({{"epoch", m.epoch}, {"step", m.step}, {"lr", m.lr},
                   {"train", m.train_loss}, {"val", m.val_loss}, {"wall_s", m.wall_s}});
  return arr;
}

std::vector<EpochMetrics> history_from_json(const nlohmann::json& arr) {
  std::vector<EpochMetrics> history;
  for (const auto& e : arr)
    history.push_back({e.at("epoch").get<std::size_t>(), e.at("step").get<std::uint64_t>(),
                       e.at("lr").get<double>(), e.at("train").get<double>(),
                       e.at("val").get<double>(), e.at("wall_s").get<double>()});
  return history;
}

}  // namespace

template <typename T>
PretrainResult pretrain(SenpaMae<T>& model, std::span<const MultispectralSample> train,
                        std::span<const MultispectralSample> val, const PretrainConfig& config,
                        const PretrainOutputs& outputs, const Checkpoint* resume) {
  config.validate();
  require(!train.empty(), "pretraining needs at least one training sample");
  require(config.crop == model.config().image_size,
          "crop must equal the model image_size (" + std::to_string(model.config().image_size) + ")");
  const auto val_set = validation_items(val, config);

  const std::size_t steps_per_epoch = (train.size() + config.batch - 1) / config.batch;
  const std::uint64_t total_steps = steps_per_epoch * config.epochs;
  const std::uint64_t warmup_steps = steps_per_epoch * config.warmup_epochs;
  const nn::AdamWOptions adam{.weight_decay = config.weight_decay};

  PretrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t start_epoch = 1;
  double wall_offset = 0.0;
  if (resume) {
    restore_parameters(*resume, model.params(), true, true);
    start_epoch = resume->meta.at("epoch").get<std::size_t>() + 1;
    result.best_val = resume->meta.at("best_val").get<double>();
    result.history = history_from_json(resume->meta.at("history"));
    if (!result.history.empty()) wall_offset = result.history.back().wall_s;
  }
  if (outputs.dir) std::filesystem::create_directories(*outputs.dir);

  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t step = static_cast<std::uint64_t>(start_epoch - 1) * steps_per_epoch;
  for (std::size_t epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      Rng rng(derive_seed(config.seed, epoch, b));
      const std::size_t lo = b * config.batch;
      const std::size_t hi = std::min(order.size(), lo + config.batch);
      const auto batch = assemble_batch(
          train, std::span<const std::size_t>(order).subspan(lo, hi - lo), config, rng);
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (const auto& item : batch) {
        const auto out = model.forward_mae(item, rng);
        const auto loss = masked_mae_loss(out.reconstruction, out.target, out.mask);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
          throw DivergenceError("non-finite reconstruction loss at epoch " + std::to_string(epoch) +
                                ", step " + std::to_string(step));
        batch_loss += value;
        nn::backward(nn::scale(loss, T(1) / static_cast<T>(batch.size())));
      }
      lr = nn::cosine_warmup_lr(step, warmup_steps, total_steps, config.lr0);
      nn::adamw_step(model.params(), lr, adam);
      ++step;
      epoch_loss += batch_loss / static_cast<double>(batch.size());
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.lr = lr;
    m.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    m.val_loss = validation_loss(model, val_set, config.seed);
    if (!std::isfinite(m.val_loss))
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    m.wall_s = wall_offset +
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    const bool improved = m.val_loss < result.best_val;
    if (improved) result.best_val = m.val_loss;

    if (outputs.dir) {
      const nlohmann::json meta = {{"epoch", epoch},
                                   {"best_val", result.best_val},
                                   {"kind", "pretrain"},
                                   {"history", history_json(result.history)}};
      const Checkpoint ckpt = make_checkpoint(model.params(), outputs.config, meta);
      if (improved) save_checkpoint(ckpt, *outputs.dir / "best.spck");
      save_checkpoint(ckpt, *outputs.dir / "last.spck");
      write_metrics(*outputs.dir / "metrics.csv", result.history);
    }
    if (epoch == outputs.stop_after) return result;
  }

  if (outputs.dir && config.recon_dumps > 0) {
    const auto dir = *outputs.dir / "recon";
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < std::min(config.recon_dumps, val_set.size()); ++i) {
      Rng rng(derive_seed(config.seed, kValStream + 2, i));
      dump_reconstruction(model, val_set[i], rng, dir, "val" + std::to_string(i));
    }
  }
  return result;
}

template PretrainResult pretrain<float>(SenpaMae<float>&, std::span<const MultispectralSample>,
                                        std::span<const MultispectralSample>,
                                        const PretrainConfig&, const PretrainOutputs&,
                                        const Checkpoint*);
template PretrainResult pretrain<double>(SenpaMae<double>&, std::span<const MultispectralSample>,
                                         std::span<const MultispectralSample>,
                                         const PretrainConfig&, const PretrainOutputs&,
                                         const Checkpoint*);
template double validation_loss<float>(const SenpaMae<float>&, std::span<const MultispectralSample>,
                                       std::uint64_t);
template double validation_loss<double>(const SenpaMae<double>&,
                                        std::span<const MultispectralSample>, std::uint64_t);
template void dump_reconstruction<float>(const SenpaMae<float>&, const MultispectralSample&, Rng&,
                                         const std::filesystem::path&, const std::string&);
template void dump_reconstruction<double>(const SenpaMae<double>&, const MultispectralSample&,
                                          Rng&, const std::filesystem::path&, const std::string&);

}  // namespace senpa
