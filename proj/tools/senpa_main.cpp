// Command-line front end. Every job is driven by an experiment config (JSON);
// see configs/ for examples.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "senpa/checkpoint.hpp"
#include "senpa/dataset_io.hpp"
#include "senpa/error.hpp"
#include "senpa/experiment.hpp"
#include "senpa/image_io.hpp"
#include "senpa/kernels.hpp"

namespace fs = std::filesystem;
using namespace senpa;

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;

struct Global {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string precision = "f32";
  bool f64() const { return precision == "f64"; }
};

ExperimentConfig load_config(const fs::path& path, const Global& g) {
  ExperimentConfig c = load_experiment_config(path);
  if (g.seed) {
    c.seeds = {*g.seed};
    c.pretrain.seed = *g.seed;
    c.finetune.seed = *g.seed;
    c.data.scene_seed = *g.seed;
    c.canonical["seeds"] = c.seeds;
    c.canonical["data"]["scene_seed"] = *g.seed;
  }
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string file_stem(const std::string& name) {
  std::string out;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

nlohmann::json to_j(const ModelConfig& m) {
  nlohmann::json j;
  to_json(j, m);
  return j;
}

// gen-data ------------------------------------------------------------------

int gen_data(const fs::path& config_path, const fs::path& out, const Global& g) {
  ExperimentConfig c = load_config(config_path, g);
  fs::create_directories(out);
  c.data.amplitude = effective_scene_options(c).amplitude;
  std::string manifest = csv_row({"file", "samples", "channels", "height", "width", "config_hash"}) + '\n';
  const std::string hash = c.hash();
  auto emit = [&](const std::string& file, const std::vector<MultispectralSample>& data) {
    write_dataset(data, out / file);
    manifest += csv_row({file, std::to_string(data.size()),
                         std::to_string(data.empty() ? 0 : data.front().channels()),
                         std::to_string(c.data.size), std::to_string(c.data.size), hash}) +
                '\n';
    std::cerr << "wrote " << (out / file).string() << " (" << data.size() << " samples)\n";
  };
  emit("pretrain.spms", render_pretrain_set(c, kPretrainSplit, c.data.pretrain_scenes));
  emit("pretrain_val.spms", render_pretrain_set(c, kPretrainValSplit, c.data.pretrain_val_scenes));
  for (const auto& a : c.train) {
    emit("finetune_" + file_stem(a.name) + ".spms",
         render_arrangement(c, a, kFinetuneSplit, c.data.finetune_scenes));
    emit("val_" + file_stem(a.name) + ".spms",
         render_arrangement(c, a, kValSplit, c.data.val_scenes));
  }
  for (const auto& a : c.eval)
    emit("eval_" + file_stem(a.name) + ".spms", render_arrangement(c, a, kValSplit, c.data.val_scenes));
  write_text(out / "manifest.csv", manifest);
  return 0;
}

// pretrain ------------------------------------------------------------------

// Without a separate validation file the last eighth of the data is held out.
std::pair<std::vector<MultispectralSample>, std::vector<MultispectralSample>> split_holdout(
    std::vector<MultispectralSample> data) {
  require(data.size() >= 2, "need at least two samples to hold out a validation part");
  const std::size_t held = std::max<std::size_t>(1, data.size() / 8);
  std::vector<MultispectralSample> val(data.end() - static_cast<std::ptrdiff_t>(held), data.end());
  data.resize(data.size() - held);
  return {std::move(data), std::move(val)};
}

template <typename T>
int run_pretrain(const ExperimentConfig& c, const fs::path& data_path,
                 const std::optional<fs::path>& val_path, const fs::path& out,
                 const std::optional<fs::path>& resume_path, std::size_t stop_after) {
  std::vector<MultispectralSample> train = read_dataset(data_path), val;
  if (val_path) val = read_dataset(*val_path);
  else std::tie(train, val) = split_holdout(std::move(train));

  SenpaMae<T> model(c.model, derive_seed(c.pretrain.seed, kModelStream));
  std::optional<Checkpoint> resume;
  if (resume_path) resume = load_checkpoint(*resume_path);
  PretrainOutputs po;
  po.dir = out;
  po.config = {{"model", to_j(c.model)}, {"pretrain", c.pretrain}};
  po.stop_after = stop_after;
  const auto r = pretrain(model, train, val, c.pretrain, po, resume ? &*resume : nullptr);
  for (const auto& m : r.history)
    std::cerr << "epoch " << m.epoch << " lr " << format_number(m.lr) << " train "
              << format_number(m.train_loss) << " val " << format_number(m.val_loss) << '\n';
  std::cout << "best validation masked MAE " << format_number(r.best_val) << '\n';
  return 0;
}

// finetune ------------------------------------------------------------------

template <typename T>
int run_finetune(const ExperimentConfig& c, const std::optional<fs::path>& init,
                 const std::vector<fs::path>& data_paths, const std::optional<fs::path>& val_path,
                 const fs::path& out) {
  ModelConfig mc = c.model;
  std::optional<Checkpoint> ckpt;
  if (init) {
    ckpt = load_checkpoint(*init);
    require(ckpt->config.contains("model"), "initial checkpoint carries no model config");
    mc = ckpt->config.at("model").get<ModelConfig>();
  }
  std::vector<std::vector<MultispectralSample>> sources;
  for (const auto& p : data_paths) sources.push_back(read_dataset(p));
  std::vector<MultispectralSample> val;
  if (val_path) val = read_dataset(*val_path);

  SegmentationModel<T> seg(mc, c.finetune, derive_seed(c.finetune.seed, kModelStream));
  if (ckpt) restore_parameters(*ckpt, seg.params(), false, false);
  seg.apply_freeze(ckpt.has_value());
  FinetuneOutputs fo;
  fo.dir = out;
  fo.config = {{"model", to_j(mc)}, {"finetune", c.finetune}};
  const auto r = finetune(seg, sources, val, c.finetune, fo);
  for (const auto& m : r.history)
    std::cerr << "epoch " << m.epoch << " lr " << format_number(m.lr) << " ce "
              << format_number(m.train_loss) << " val IoU " << format_number(m.val_iou) << '\n';
  if (!val.empty()) std::cout << "validation micro IoU " << format_number(r.final_val_iou) << '\n';
  return 0;
}

// eval ----------------------------------------------------------------------

std::vector<std::uint8_t> colourise(std::span<const std::uint16_t> labels) {
  std::vector<std::uint8_t> rgb;
  rgb.reserve(labels.size() * 3);
  for (auto k : labels)
    for (auto v : class_colour(k)) rgb.push_back(v);
  return rgb;
}

template <typename T>
int run_eval(const fs::path& ckpt_path, const fs::path& data_path,
             const std::optional<SensorSpec>& sensor, const std::vector<std::size_t>& channels,
             std::size_t maps, const fs::path& out) {
  const auto seg = load_segmentation_model<T>(load_checkpoint(ckpt_path));
  auto data = read_dataset(data_path);
  for (auto& s : data) {
    std::vector<std::size_t> idx = channels;
    if (idx.empty())
      for (std::size_t c = 0; c < s.channels(); ++c) idx.push_back(c);
    if (!channels.empty()) s = s.select_channels(channels);
    // The sensor file supplies the (SRF, GSD) fed to the model for each kept
    // channel, indexed like the dataset's channels.
    if (sensor)
      for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < sensor->size(), "--sensor has no channel " + std::to_string(idx[i]));
        const auto& ch = sensor->channels[idx[i]];
        s.params[i] = ChannelParams{ch.srf, static_cast<float>(ch.gsd_m)};
      }
  }
  fs::create_directories(out);
  IouCounts counts(seg->config().classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    require(s.labels.has_value(), "evaluation needs labelled samples");
    const auto pred = seg->predict(s);
    counts.add(pred, *s.labels);
    if (i < maps) {
      write_ppm(out / ("pred_" + std::to_string(i) + ".ppm"), colourise(pred), s.height, s.width);
      write_ppm(out / ("truth_" + std::to_string(i) + ".ppm"), colourise(*s.labels), s.height,
                s.width);
    }
  }
  std::string csv = csv_row({"metric", "value"}) + '\n';
  csv += csv_row({"micro_iou", format_number(counts.micro_iou())}) + '\n';
  const auto per_class = counts.per_class_iou();
  for (std::size_t k = 0; k < per_class.size(); ++k)
    csv += csv_row({"iou_class_" + std::to_string(k), format_number(per_class[k])}) + '\n';
  csv += csv_row({"samples", std::to_string(data.size())}) + '\n';
  write_text(out / "eval.csv", csv);
  std::cout << "micro IoU " << format_number(counts.micro_iou()) << '\n';
  return 0;
}

// emit-figures --------------------------------------------------------------

template <typename T>
int run_figures(const fs::path& ckpt_path, const MultispectralSample& sample, std::uint64_t seed,
                const fs::path& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  require(ckpt.config.contains("model"), "checkpoint carries no model config");
  const auto mc = ckpt.config.at("model").get<ModelConfig>();
  SenpaMae<T> model(mc, 0);
  restore_parameters(ckpt, model.params(), false, false);
  const std::size_t size = mc.image_size;
  require(sample.height >= size && sample.width >= size, "sample smaller than the model input");
  emit_figures(model, sample.crop(0, 0, size, size), seed, out);
  return 0;
}

std::vector<std::size_t> parse_channels(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("bad channel index '" + item + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor-parameter-aware masked autoencoder on synthetic multispectral scenes"};
  app.require_subcommand(1);
  Global g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override every seed in the config");
  app.add_option("--threads", g.threads, "OpenMP threads for the kernels")
      ->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Floating point type of the model")
      ->check(CLI::IsMember({"f32", "f64"}));

  fs::path config, out, data, val_data, resume, init, checkpoint;
  std::vector<fs::path> data_list;
  std::string channels_text, sensor;
  std::size_t maps = 4, index = 0, stop_after = 0;
  std::uint64_t figure_seed = 0, scene_seed_value = 0;

  auto* gen = app.add_subcommand("gen-data", "Render the datasets of an experiment config");
  gen->add_option("--config", config)->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out)->required();

  auto* pre = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  pre->add_option("--config", config)->required()->check(CLI::ExistingFile);
  pre->add_option("--data", data)->required()->check(CLI::ExistingFile);
  pre->add_option("--val-data", val_data)->check(CLI::ExistingFile);
  pre->add_option("--out", out)->required();
  pre->add_option("--resume", resume, "Continue from a last.spck")->check(CLI::ExistingFile);
  pre->add_option("--stop-after", stop_after, "Stop after this epoch (resume later)");

  auto* fine = app.add_subcommand("finetune", "Segmentation finetuning");
  fine->add_option("--config", config)->required()->check(CLI::ExistingFile);
  fine->add_option("--init", init, "Pretrained checkpoint (omit to train from scratch)")
      ->check(CLI::ExistingFile);
  fine->add_option("--data", data_list, "Training source; repeat for several sensors")
      ->required()
      ->check(CLI::ExistingFile);
  fine->add_option("--val-data", val_data)->check(CLI::ExistingFile);
  fine->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "Micro IoU of a finetuned checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data)->required()->check(CLI::ExistingFile);
  ev->add_option("--sensor", sensor, "Sensor spec JSON whose channel parameters are fed to the model")
      ->check(CLI::ExistingFile);
  ev->add_option("--channels", channels_text, "Comma-separated channel subset, e.g. 0,1,2,3");
  ev->add_option("--maps", maps, "Number of prediction/label PPM pairs to write");
  ev->add_option("--out", out)->required();

  auto* zs = app.add_subcommand("run-zero-shot", "Zero-shot sensor-transfer table");
  zs->add_option("--config", config)->required()->check(CLI::ExistingFile);
  zs->add_option("--out", out)->required();

  auto* ms = app.add_subcommand("run-multi-sensor", "Multi-sensor finetuning table");
  ms->add_option("--config", config)->required()->check(CLI::ExistingFile);
  ms->add_option("--out", out)->required();

  auto* fig = app.add_subcommand("emit-figures", "Mask / reconstruction / target images and SRFs");
  fig->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  fig->add_option("--out", out)->required();
  fig->add_option("--data", data, "Dataset to take the sample from")->check(CLI::ExistingFile);
  fig->add_option("--index", index, "Sample index in --data");
  fig->add_option("--config", config, "Experiment config for rendering a fresh scene")
      ->check(CLI::ExistingFile);
  fig->add_option("--sensor", sensor, "Sensor name in --config to render through");
  fig->add_option("--scene-seed", scene_seed_value);
  fig->add_option("--mask-seed", figure_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed_value;
  kernels::set_num_threads(g.threads);

  try {
    if (*gen) return gen_data(config, out, g);
    if (*pre) {
      const auto c = load_config(config, g);
      const std::optional<fs::path> v = val_data.empty() ? std::nullopt : std::optional(val_data);
      const std::optional<fs::path> r = resume.empty() ? std::nullopt : std::optional(resume);
      return g.f64() ? run_pretrain<double>(c, data, v, out, r, stop_after)
                     : run_pretrain<float>(c, data, v, out, r, stop_after);
    }
    if (*fine) {
      const auto c = load_config(config, g);
      const std::optional<fs::path> i = init.empty() ? std::nullopt : std::optional(init);
      const std::optional<fs::path> v = val_data.empty() ? std::nullopt : std::optional(val_data);
      return g.f64() ? run_finetune<double>(c, i, data_list, v, out)
                     : run_finetune<float>(c, i, data_list, v, out);
    }
    if (*ev) {
      const auto ch = parse_channels(channels_text);
      std::optional<SensorSpec> spec;
      if (!sensor.empty()) spec = load_sensor_spec(sensor);
      return g.f64() ? run_eval<double>(checkpoint, data, spec, ch, maps, out)
                     : run_eval<float>(checkpoint, data, spec, ch, maps, out);
    }
    if (*zs || *ms) {
      const auto c = load_config(config, g);
      const auto r = *zs ? run_zero_shot(c, out, &std::cerr, g.f64())
                         : run_multi_sensor(c, out, &std::cerr, g.f64());
      std::cout << results_table_csv(c, r);
      return 0;
    }
    if (*fig) {
      MultispectralSample sample;
      if (!data.empty()) {
        const auto all = read_dataset(data);
        require(index < all.size(), "--index out of range");
        sample = all[index];
      } else {
        require(!config.empty() && !sensor.empty(), "emit-figures needs --data or --config with --sensor");
        ExperimentConfig c = load_config(config, g);
        require(c.sensors.count(sensor) == 1, "unknown sensor '" + sensor + "'");
        Arrangement a;
        a.sensor = sensor;
        for (std::size_t k = 0; k < c.sensors.at(sensor).size(); ++k) a.channels.push_back(k);
        c.data.scene_seed = scene_seed_value;
        sample = render_arrangement(c, a, kValSplit, 1).front();
      }
      return g.f64() ? run_figures<double>(checkpoint, sample, figure_seed, out)
                     : run_figures<float>(checkpoint, sample, figure_seed, out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
