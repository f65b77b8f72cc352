#include "senpa/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "senpa/error.hpp"
#include "senpa/image_io.hpp"

namespace senpa {

using nn::Tensor;

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t log2_exact(std::size_t v) {
  std::size_t s = 0;
  while ((std::size_t{1} << s) < v) ++s;
  return s;
}

}  // namespace

std::string to_string(SensorMode mode) {
  switch (mode) {
    case SensorMode::Fixed: return "fixed";
    case SensorMode::Alternating: return "alternating";
    case SensorMode::Random: return "random";
  }
  return "?";
}

SensorMode parse_sensor_mode(const std::string& text) {
  if (text == "fixed") return SensorMode::Fixed;
  if (text == "alternating") return SensorMode::Alternating;
  if (text == "random") return SensorMode::Random;
  throw ConfigError("unknown sensor mode '" + text + "' (expected fixed, alternating or random)");
}

std::size_t FinetuneConfig::frozen_count(std::size_t enc_layers) const {
  return frozen_layers.value_or(frozen_layer_count(enc_layers));
}

void FinetuneConfig::validate(std::size_t enc_layers) const {
  require(epochs >= 1, "finetune epochs must be at least 1");
  require(warmup_epochs <= epochs, "warmup_epochs exceeds epochs");
  require(lr0 >= 0.0 && weight_decay >= 0.0, "lr0 and weight_decay must be non-negative");
  require(batch >= 1, "batch must be at least 1");
  require(classes >= 2 && classes <= 8, "classes must lie in [2, 8]");
  require(channels >= 1, "channels must be at least 1");
  require(head_width >= 1, "head_width must be positive");
  require(frozen_count(enc_layers) < enc_layers,
          "frozen encoder layers (" + std::to_string(frozen_count(enc_layers)) +
              ") must be fewer than the encoder depth (" + std::to_string(enc_layers) + ")");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"lr0", c.lr0},
       {"weight_decay", c.weight_decay},
       {"batch", c.batch},
       {"classes", c.classes},
       {"channels", c.channels},
       {"head_width", c.head_width},
       {"freeze_spe", c.freeze_spe},
       {"freeze_all", c.freeze_all},
       {"balanced", c.balanced},
       {"sensor_mode", to_string(c.sensor_mode)},
       {"seed", c.seed}};
  if (c.frozen_layers) j["frozen_layers"] = *c.frozen_layers;
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  c = FinetuneConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch = j.value("batch", c.batch);
  c.classes = j.value("classes", c.classes);
  c.channels = j.value("channels", c.channels);
  c.head_width = j.value("head_width", c.head_width);
  c.freeze_spe = j.value("freeze_spe", c.freeze_spe);
  c.freeze_all = j.value("freeze_all", c.freeze_all);
  c.balanced = j.value("balanced", c.balanced);
  c.sensor_mode = parse_sensor_mode(j.value("sensor_mode", to_string(c.sensor_mode)));
  c.seed = j.value("seed", c.seed);
  if (j.contains("frozen_layers")) c.frozen_layers = j.at("frozen_layers").get<std::size_t>();
}

template <typename T>
SegmentationModel<T>::SegmentationModel(const ModelConfig& model, const FinetuneConfig& config,
                                        std::uint64_t seed)
    : config_(config), backbone_(model, seed), taps_(tap_layers(model.enc_layers)) {
  config_.validate(model.enc_layers);
  require(is_power_of_two(model.patch) && model.patch >= 8,
          "the segmentation head needs a power-of-two patch size of at least 8");
  stages_ = log2_exact(model.patch);
  const std::size_t d = model.d_emb;
  const std::size_t w = config_.head_width;
  auto& params = backbone_.params();
  for (std::size_t j = 0; j < taps_.size(); ++j) {
    fuse_.emplace_back(params, "seg.fuse." + std::to_string(j), config_.channels * d, d);
    project_.emplace_back(params, "seg.proj." + std::to_string(j), d, w);
  }
  for (std::size_t s = 0; s < stages_; ++s)
    refine_.emplace_back(params, "seg.refine." + std::to_string(s), w, w);
  final_conv_ = nn::Conv3x3<T>(params, "seg.final", w, w);
  classifier_ = nn::Linear<T>(params, "seg.classifier", w, config_.classes);
}

template <typename T>
std::vector<Tensor<T>> SegmentationModel<T>::fuse_tokens(std::span<const Tensor<T>> features,
                                                         std::size_t channels) const {
  require(features.size() == fuse_.size(), "expected one feature map per tap layer");
  require(channels == config_.channels,
          "the fusion layers take " + std::to_string(config_.channels) + " channels, got " +
              std::to_string(channels));
  const std::size_t g = backbone_.config().positions();
  std::vector<Tensor<T>> grids;
  for (std::size_t j = 0; j < features.size(); ++j) {
    require(features[j].rows() == channels * g, "feature rows do not match channels x positions");
    std::vector<Tensor<T>> per_channel;
    for (std::size_t c = 0; c < channels; ++c) {
      std::vector<std::size_t> rows(g);
      for (std::size_t s = 0; s < g; ++s) rows[s] = c * g + s;
      per_channel.push_back(nn::gather_rows(features[j], std::span<const std::size_t>(rows)));
    }
    grids.push_back(fuse_[j](nn::concat_cols(std::span<const Tensor<T>>(per_channel))));
  }
  return grids;
}

template <typename T>
Tensor<T> SegmentationModel<T>::decode_segmentation(std::span<const Tensor<T>> grids) const {
  require(grids.size() == project_.size(), "expected one fused grid per tap layer");
  std::size_t side = backbone_.config().grid();
  for (const auto& g : grids) require(g.rows() == side * side, "fused grid has the wrong size");
  std::vector<Tensor<T>> r;
  for (std::size_t j = 0; j < grids.size(); ++j) r.push_back(project_[j](grids[j]));

  // Deepest tap first; each stage doubles the resolution and merges the next
  // shallower tap, brought to the same scale by nearest upsampling.
  Tensor<T> s = r.back();
  for (std::size_t t = 0; t < stages_; ++t) {
    s = nn::upsample2x(nn::gelu(refine_[t](s, side, side)), side, side);
    side *= 2;
    if (t + 1 < r.size()) {
      Tensor<T> skip = r[r.size() - 2 - t];
      std::size_t skip_side = backbone_.config().grid();
      while (skip_side < side) {
        skip = nn::upsample2x(skip, skip_side, skip_side);
        skip_side *= 2;
      }
      s = nn::add(s, skip);
    }
  }
  return classifier_(nn::gelu(final_conv_(s, side, side)));
}

template <typename T>
Tensor<T> SegmentationModel<T>::forward(const MultispectralSample& sample) const {
  const auto features = backbone_.forward_features(sample, taps_);
  const auto grids = fuse_tokens(features, sample.channels());
  return decode_segmentation(grids);
}

template <typename T>
std::vector<std::uint16_t> SegmentationModel<T>::predict(const MultispectralSample& sample) const {
  nn::NoGradGuard no_grad;
  const Tensor<T> logits = forward(sample);
  const std::size_t k = logits.cols();
  std::vector<std::uint16_t> pred(logits.rows());
  const auto v = logits.values();
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto row = v.subspan(p * k, k);
    pred[p] = static_cast<std::uint16_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

template <typename T>
void SegmentationModel<T>::apply_freeze(bool pretrained) {
  auto& params = backbone_.params();
  params.set_trainable("", !config_.freeze_all);
  if (config_.freeze_all) return;
  // Reconstruction-only parts never see a gradient here.
  for (const char* prefix : {"mask_token", "dec_pos", "decoder.", "dec_norm.", "head.", "enc_norm."})
    params.set_trainable(prefix, false);
  if (!pretrained) return;
  for (const auto& prefix : backbone_.frozen_prefixes()) {
    const bool spe = prefix.starts_with("g_srf") || prefix.starts_with("g_gsd");
    if (spe && !config_.freeze_spe) continue;
    params.set_trainable(prefix, false);
  }
  const std::size_t frozen = config_.frozen_count(backbone_.config().enc_layers);
  for (std::size_t l = frozen_layer_count(backbone_.config().enc_layers); l < frozen; ++l)
    params.set_trainable("encoder." + std::to_string(l) + ".", false);
  for (std::size_t l = frozen; l < backbone_.config().enc_layers; ++l)
    params.set_trainable("encoder." + std::to_string(l) + ".", true);
}

BalancedSampler::BalancedSampler(std::span<const MultispectralSample> dataset,
                                 std::size_t classes) {
  require(!dataset.empty(), "balanced sampling needs a non-empty dataset");
  std::vector<std::size_t> frequency(classes, 0);
  for (const auto& s : dataset) {
    require(s.labels.has_value(), "balanced sampling needs labelled samples");
    std::vector<std::size_t> hist(classes, 0);
    for (std::uint16_t v : *s.labels) {
      require(v < classes, "label " + std::to_string(v) + " out of range");
      ++hist[v];
    }
    const auto dom = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
    dominant_.push_back(dom);
    ++frequency[dom];
  }
  for (std::size_t k = 0; k < classes; ++k) (frequency[k] ? active_ : dropped_).push_back(k);
  for (std::size_t k : dropped_)
    std::cerr << "warning: class " << k << " dominates no training sample; dropped from the sampling scheme\n";
  double total = 0.0;
  for (std::size_t dom : dominant_) {
    probabilities_.push_back(1.0 / static_cast<double>(frequency[dom]));
    total += probabilities_.back();
  }
  double acc = 0.0;
  for (auto& p : probabilities_) {
    p /= total;
    acc += p;
    cumulative_.push_back(acc);
  }
}

std::size_t BalancedSampler::draw(Rng& rng) const {
  const double u = uniform01(rng) * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                               cumulative_.size() - 1);
}

void IouCounts::add(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth) {
  require(pred.size() == truth.size(), "prediction and truth sizes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] < classes && truth[i] < classes, "class id out of range");
    if (pred[i] == truth[i]) {
      ++correct;
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  total += pred.size();
}

double IouCounts::micro_iou() const {
  // Pooled over classes every wrong pixel is one FP and one FN.
  const std::uint64_t wrong = total - correct;
  const std::uint64_t denom = correct + 2 * wrong;
  return denom == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(denom);
}

std::vector<double> IouCounts::per_class_iou() const {
  std::vector<double> iou(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    const std::uint64_t denom = tp[k] + fp[k] + fn[k];
    iou[k] = denom == 0 ? std::numeric_limits<double>::quiet_NaN()
                        : static_cast<double>(tp[k]) / static_cast<double>(denom);
  }
  return iou;
}

double micro_iou(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth,
                 std::size_t classes) {
  IouCounts counts(classes);
  counts.add(pred, truth);
  return counts.micro_iou();
}

template <typename T>
IouCounts evaluate(const SegmentationModel<T>& model, std::span<const MultispectralSample> data) {
  IouCounts counts(model.config().classes);
  for (const auto& s : data) {
    require(s.labels.has_value(), "evaluation needs labelled samples");
    counts.add(model.predict(s), *s.labels);
  }
  return counts;
}

namespace {

MultispectralSample crop_to(const MultispectralSample& s, std::size_t size, Rng& rng) {
  require(s.height >= size && s.width >= size, "finetune sample smaller than the model input");
  if (s.height == size && s.width == size) return s;
  const std::size_t y0 = uniform_index(rng, s.height - size + 1);
  const std::size_t x0 = uniform_index(rng, s.width - size + 1);
  return s.crop(y0, x0, size, size);
}

}  // namespace

std::size_t draw_source(const FinetuneConfig& config, std::size_t sources,
                        std::size_t batch_index, Rng& rng) {
  require(sources >= 1, "no training sources");
  switch (config.sensor_mode) {
    case SensorMode::Fixed: return 0;
    case SensorMode::Alternating: return batch_index % sources;
    case SensorMode::Random: return uniform_index(rng, sources);
  }
  return 0;
}

namespace {

void write_finetune_metrics(const std::filesystem::path& path,
                            const std::vector<FinetuneEpoch>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "epoch,step,lr,train_ce,val_micro_iou,wall_s\n";
  for (const auto& m : history)
    out << csv_row({std::to_string(m.epoch), std::to_string(m.step), format_number(m.lr),
                    format_number(m.train_loss), format_number(m.val_iou), format_number(m.wall_s)})
        << '\n';
}

}  // namespace

template <typename T>
FinetuneResult finetune(SegmentationModel<T>& model,
                        std::span<const std::vector<MultispectralSample>> sources,
                        std::span<const MultispectralSample> val, const FinetuneConfig& config,
                        const FinetuneOutputs& outputs) {
  config.validate(model.backbone().config().enc_layers);
  require(!sources.empty(), "finetuning needs at least one training source");
  const std::size_t size = model.backbone().config().image_size;
  std::size_t train_items = 0;
  std::vector<BalancedSampler> samplers;
  for (const auto& src : sources) {
    require(!src.empty(), "empty finetuning source");
    for (const auto& s : src) {
      require(s.labels.has_value(), "finetuning samples need labels");
      if (config.sensor_mode == SensorMode::Random)
        require(s.channels() >= config.channels, "source sample has too few channels");
      else
        require(s.channels() == config.channels,
                "source sample has " + std::to_string(s.channels()) + " channels, expected " +
                    std::to_string(config.channels));
    }
    train_items = std::max(train_items, src.size());
    if (config.balanced) samplers.emplace_back(src, config.classes);
  }
  if (config.sensor_mode == SensorMode::Fixed) train_items = sources[0].size();

  const std::size_t steps_per_epoch = (train_items + config.batch - 1) / config.batch;
  const std::uint64_t total_steps = steps_per_epoch * config.epochs;
  const std::uint64_t warmup_steps = steps_per_epoch * config.warmup_epochs;
  const nn::AdamWOptions adam{.weight_decay = config.weight_decay};
  if (outputs.dir) std::filesystem::create_directories(*outputs.dir);

  // A fresh optimiser: moments left over from pretraining would skew the
  // first updates of the trainable encoder layers.
  model.params().reset_optimizer();
  FinetuneResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      Rng rng(derive_seed(config.seed, epoch, b));
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < config.batch; ++i) {
        const std::size_t src = draw_source(config, sources.size(), b, rng);
        const auto& data = sources[src];
        const std::size_t idx =
            config.balanced ? samplers[src].draw(rng) : uniform_index(rng, data.size());
        MultispectralSample item = data[idx];
        if (config.sensor_mode == SensorMode::Random)
          item = item.select_channels(sample_distinct(rng, item.channels(), config.channels));
        item = crop_to(item, size, rng);
        const Tensor<T> logits = model.forward(item);
        const Tensor<T> loss = nn::cross_entropy(logits, std::span<const std::uint16_t>(*item.labels));
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
          throw DivergenceError("non-finite segmentation loss at epoch " + std::to_string(epoch) +
                                ", step " + std::to_string(step));
        batch_loss += value;
        if (loss.requires_grad())
          nn::backward(nn::scale(loss, T(1) / static_cast<T>(config.batch)));
      }
      lr = nn::cosine_warmup_lr(step, warmup_steps, total_steps, config.lr0);
      nn::adamw_step(model.params(), lr, adam);
      ++step;
      epoch_loss += batch_loss / static_cast<double>(config.batch);
    }
    FinetuneEpoch m;
    m.epoch = epoch;
    m.step = step;
    m.lr = lr;
    m.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    m.val_iou = val.empty() ? 0.0 : evaluate(model, val).micro_iou();
    m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (outputs.dir) write_finetune_metrics(*outputs.dir / "metrics.csv", result.history);
  }
  result.final_val_iou = result.history.back().val_iou;
  if (outputs.dir) {
    const nlohmann::json meta = {{"epoch", config.epochs}, {"kind", "finetune"},
                                 {"val_micro_iou", result.final_val_iou}};
    save_checkpoint(make_checkpoint(model.params(), outputs.config, meta),
                    *outputs.dir / "finetuned.spck");
  }
  return result;
}

template <typename T>
std::unique_ptr<SegmentationModel<T>> load_segmentation_model(const Checkpoint& ckpt) {
  require(ckpt.config.contains("model") && ckpt.config.contains("finetune"),
          "checkpoint is not a finetuned segmentation model");
  const auto model = ckpt.config.at("model").get<ModelConfig>();
  const auto ft = ckpt.config.at("finetune").get<FinetuneConfig>();
  auto seg = std::make_unique<SegmentationModel<T>>(model, ft, 0);
  restore_parameters(ckpt, seg->params(), true, false);
  return seg;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;
template FinetuneResult finetune<float>(SegmentationModel<float>&,
                                        std::span<const std::vector<MultispectralSample>>,
                                        std::span<const MultispectralSample>,
                                        const FinetuneConfig&, const FinetuneOutputs&);
template FinetuneResult finetune<double>(SegmentationModel<double>&,
                                         std::span<const std::vector<MultispectralSample>>,
                                         std::span<const MultispectralSample>,
                                         const FinetuneConfig&, const FinetuneOutputs&);
template IouCounts evaluate<float>(const SegmentationModel<float>&,
                                   std::span<const MultispectralSample>);
template IouCounts evaluate<double>(const SegmentationModel<double>&,
                                    std::span<const MultispectralSample>);
template std::unique_ptr<SegmentationModel<float>> load_segmentation_model<float>(const Checkpoint&);
template std::unique_ptr<SegmentationModel<double>> load_segmentation_model<double>(
    const Checkpoint&);

}  // namespace senpa
