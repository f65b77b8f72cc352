#include "senpa/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "senpa/error.hpp"
#include "senpa/image_io.hpp"

namespace senpa {

namespace {

void from_json_scene(const nlohmann::json& j, SceneOptions& s) {
  s.library_seed = j.value("library_seed", s.library_seed);
  s.jitter = j.value("jitter", s.jitter);
  s.correlation_px = j.value("correlation_px", s.correlation_px);
  s.temperature = j.value("temperature", s.temperature);
}

Arrangement parse_arrangement(const nlohmann::json& j,
                              const std::map<std::string, SensorSpec>& sensors) {
  Arrangement a;
  if (j.contains("random_from")) {
    a.random_from = j.at("random_from").get<std::vector<std::string>>();
    a.random_channels = j.value("channels", a.random_channels);
    require(!a.random_from.empty(), "random_from must list at least one sensor");
    for (const auto& s : a.random_from) {
      require(sensors.count(s) == 1, "arrangement refers to unknown sensor '" + s + "'");
      require(sensors.at(s).size() >= a.random_channels,
              "sensor '" + s + "' has fewer than " + std::to_string(a.random_channels) + " channels");
    }
    a.name = j.value("name", std::string("S_rand"));
    return a;
  }
  a.sensor = j.at("sensor").get<std::string>();
  require(sensors.count(a.sensor) == 1, "arrangement refers to unknown sensor '" + a.sensor + "'");
  const SensorSpec& spec = sensors.at(a.sensor);
  if (j.contains("channels")) {
    a.channels = j.at("channels").get<std::vector<std::size_t>>();
  } else {
    for (std::size_t c = 0; c < spec.size(); ++c) a.channels.push_back(c);
  }
  for (std::size_t c : a.channels)
    require(c < spec.size(), "channel " + std::to_string(c) + " does not exist in sensor '" +
                                 a.sensor + "'");
  std::string suffix;
  for (std::size_t c : a.channels) suffix += std::to_string(c);
  a.name = j.value("name", a.sensor + suffix);
  return a;
}

// Lower-case CSV-friendly column prefix.
std::string column_name(const std::string& name) {
  std::string out;
  for (char ch : name) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') ? ch : '_';
  return out;
}

}  // namespace

RowSpec parse_row(const std::string& id) {
  RowSpec r;
  r.id = id;
  if (id == "base_scratch") {
    r.mode = EncodingMode::Base;
    r.pretrained = false;
  } else if (id == "base") {
    r.mode = EncodingMode::Base;
  } else if (id == "base_ssa") {
    r.mode = EncodingMode::Base;
    r.ssa = true;
  } else if (id == "spe1" || id == "spe1_ssa" || id == "spe2" || id == "spe2_ssa") {
    r.mode = id.starts_with("spe1") ? EncodingMode::Spe1 : EncodingMode::Spe2;
    r.ssa = id.ends_with("_ssa");
  } else {
    throw ConfigError("unknown table row '" + id +
                      "' (expected base_scratch, base, base_ssa, spe1, spe1_ssa, spe2, spe2_ssa)");
  }
  return r;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(nn::fnv1a(canonical.dump())));
  return buf;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir) {
  try {
    ExperimentConfig c;
    c.canonical = j;
    const std::string kind = j.value("kind", std::string("zero_shot"));
    if (kind == "zero_shot") c.kind = ExperimentKind::ZeroShot;
    else if (kind == "multi_sensor") c.kind = ExperimentKind::MultiSensor;
    else throw ConfigError("unknown experiment kind '" + kind + "'");
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    require(!c.seeds.empty(), "at least one seed is required");

    require(j.contains("sensors") && j.at("sensors").is_object() && !j.at("sensors").empty(),
            "config needs a non-empty 'sensors' object");
    for (const auto& [name, value] : j.at("sensors").items()) {
      SensorSpec spec;
      if (value.is_string()) {
        std::filesystem::path p = value.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        spec = load_sensor_spec(p);
        c.canonical["sensors"][name] = sensor_spec_to_json(spec);
      } else {
        spec = parse_sensor_spec(value);
      }
      c.sensors.emplace(name, std::move(spec));
    }

    const nlohmann::json data = j.value("data", nlohmann::json::object());
    c.data.size = data.value("size", c.data.size);
    c.data.classes = data.value("classes", c.data.classes);
    c.data.pretrain_scenes = data.value("pretrain_scenes", c.data.pretrain_scenes);
    c.data.pretrain_val_scenes = data.value("pretrain_val_scenes", c.data.pretrain_val_scenes);
    c.data.finetune_scenes = data.value("finetune_scenes", c.data.finetune_scenes);
    c.data.val_scenes = data.value("val_scenes", c.data.val_scenes);
    c.data.scene_seed = data.value("scene_seed", c.data.scene_seed);
    c.data.calibration_scenes = data.value("calibration_scenes", c.data.calibration_scenes);
    if (data.contains("amplitude")) c.data.amplitude = data.at("amplitude").get<double>();
    if (data.contains("scene")) from_json_scene(data.at("scene"), c.data.scene);
    if (data.contains("pretrain_sensors")) {
      c.data.pretrain_sensors = data.at("pretrain_sensors").get<std::vector<std::string>>();
    } else {
      for (const auto& [name, spec] : c.sensors) c.data.pretrain_sensors.push_back(name);
    }
    for (const auto& s : c.data.pretrain_sensors)
      require(c.sensors.count(s) == 1, "pretrain_sensors refers to unknown sensor '" + s + "'");
    require(c.data.size >= kMinSceneSize, "data.size must be at least " + std::to_string(kMinSceneSize));
    require(c.data.classes >= 2 && c.data.classes <= kMaxClasses, "data.classes must lie in [2, 8]");
    require(c.data.finetune_scenes >= 1 && c.data.val_scenes >= 1, "scene counts must be positive");

    c.model = j.value("model", nlohmann::json::object()).get<ModelConfig>();
    c.pretrain = j.value("pretrain", nlohmann::json::object()).get<PretrainConfig>();
    c.finetune = j.value("finetune", nlohmann::json::object()).get<FinetuneConfig>();
    c.finetune.classes = c.data.classes;
    c.finetune.validate(c.model.enc_layers);
    require(c.model.image_size == c.pretrain.crop, "pretrain.crop must equal model.image_size");
    require(c.data.size == c.model.image_size, "data.size must equal model.image_size");

    if (!j.contains("experiment")) return c;
    const auto& exp = j.at("experiment");
    for (const auto& a : exp.at("train")) c.train.push_back(parse_arrangement(a, c.sensors));
    for (const auto& a : exp.value("eval", nlohmann::json::array()))
      c.eval.push_back(parse_arrangement(a, c.sensors));
    require(!c.train.empty(), "experiment.train must list at least one arrangement");
    if (c.kind == ExperimentKind::ZeroShot) {
      require(c.train.size() == 1, "a zero-shot experiment trains on exactly one arrangement");
      require(c.train[0].random_from.empty(), "zero-shot training needs a fixed arrangement");
    }
    // Multi-sensor training without an explicit mode draws sources per item.
    if (c.kind == ExperimentKind::MultiSensor && c.finetune.sensor_mode == SensorMode::Fixed)
      c.finetune.sensor_mode = SensorMode::Random;
    const bool random = c.finetune.sensor_mode == SensorMode::Random;
    for (const auto& a : c.train)
      require(!a.random_from.empty() ? a.random_channels == c.finetune.channels
              : random              ? a.channels.size() >= c.finetune.channels
                                    : a.channels.size() == c.finetune.channels,
              "training arrangement '" + a.name + "' does not match finetune.channels");
    for (const auto& a : c.eval)
      require(a.random_from.empty() ? a.channels.size() == c.finetune.channels
                                    : a.random_channels == c.finetune.channels,
              "evaluation arrangement '" + a.name + "' must have finetune.channels channels");
    const auto rows = exp.value("rows", std::vector<std::string>{"base_scratch", "base", "spe1",
                                                                 "spe1_ssa", "spe2", "spe2_ssa"});
    for (const auto& r : rows) c.rows.push_back(parse_row(r));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, path.parent_path());
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t split, std::size_t index) {
  return derive_seed(base, split, index);
}

SceneOptions effective_scene_options(const ExperimentConfig& config) {
  SceneOptions opts = config.data.scene;
  if (config.data.amplitude) {
    opts.amplitude = *config.data.amplitude;
  } else {
    std::vector<SensorSpec> all;
    for (const auto& [name, spec] : config.sensors) all.push_back(spec);
    opts.amplitude = calibrate_amplitude(all, config.data.classes, opts, config.data.calibration_scenes);
  }
  return opts;
}

ChannelDraw draw_channels(const Arrangement& arrangement,
                          const std::map<std::string, SensorSpec>& sensors,
                          std::uint64_t scene_seed) {
  if (arrangement.random_from.empty()) return {arrangement.sensor, arrangement.channels};
  Rng rng(derive_seed(scene_seed, 0x72616e64ULL));
  ChannelDraw d;
  d.sensor = arrangement.random_from[uniform_index(rng, arrangement.random_from.size())];
  d.channels = sample_distinct(rng, sensors.at(d.sensor).size(), arrangement.random_channels);
  return d;
}

namespace {

std::vector<MultispectralSample> render_with(const ExperimentConfig& config,
                                             const SceneOptions& opts, const Arrangement& a,
                                             std::uint64_t split, std::size_t count) {
  std::vector<MultispectralSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = scene_seed(config.data.scene_seed, split, i);
    const auto g = generate_scene(seed, config.data.size, config.data.size, config.data.classes, opts);
    const ChannelDraw d = draw_channels(a, config.sensors, seed);
    out.push_back(render_sample(g.scene, g.mask, config.sensors.at(d.sensor), d.channels));
  }
  return out;
}

}  // namespace

std::vector<MultispectralSample> render_arrangement(const ExperimentConfig& config,
                                                    const Arrangement& arrangement,
                                                    std::uint64_t split, std::size_t count) {
  return render_with(config, effective_scene_options(config), arrangement, split, count);
}

std::vector<MultispectralSample> render_pretrain_set(const ExperimentConfig& config,
                                                     std::uint64_t split, std::size_t count) {
  const SceneOptions opts = effective_scene_options(config);
  std::vector<MultispectralSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& name = config.data.pretrain_sensors[i % config.data.pretrain_sensors.size()];
    const SensorSpec& spec = config.sensors.at(name);
    std::vector<std::size_t> all(spec.size());
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
    const auto g = generate_scene(scene_seed(config.data.scene_seed, split, i), config.data.size,
                                  config.data.size, config.data.classes, opts);
    out.push_back(render_sample(g.scene, g.mask, spec, all));
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

struct Datasets {
  std::vector<MultispectralSample> pretrain;
  std::vector<MultispectralSample> pretrain_val;
  std::vector<std::vector<MultispectralSample>> sources;
  std::vector<MultispectralSample> val;
  std::vector<std::vector<MultispectralSample>> eval;
};

Datasets build_datasets(const ExperimentConfig& config, std::ostream* log) {
  const SceneOptions opts = effective_scene_options(config);
  if (log) *log << "scene amplitude " << format_number(opts.amplitude) << '\n';
  ExperimentConfig fixed = config;
  fixed.data.amplitude = opts.amplitude;
  Datasets d;
  const bool any_pretrained =
      std::any_of(config.rows.begin(), config.rows.end(), [](const RowSpec& r) { return r.pretrained; });
  if (any_pretrained) {
    d.pretrain = render_pretrain_set(fixed, kPretrainSplit, config.data.pretrain_scenes);
    d.pretrain_val = render_pretrain_set(fixed, kPretrainValSplit, config.data.pretrain_val_scenes);
  }
  for (const auto& a : config.train)
    d.sources.push_back(render_with(fixed, opts, a, kFinetuneSplit, config.data.finetune_scenes));
  if (config.kind == ExperimentKind::ZeroShot)
    d.val = render_with(fixed, opts, config.train[0], kValSplit, config.data.val_scenes);
  for (const auto& a : config.eval)
    d.eval.push_back(render_with(fixed, opts, a, kValSplit, config.data.val_scenes));
  return d;
}

nlohmann::json model_json(const ModelConfig& m) {
  nlohmann::json j;
  to_json(j, m);
  return j;
}

template <typename T>
CellResult run_cell(const ExperimentConfig& config, const Datasets& data, const RowSpec& row,
                    std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir,
                    std::ostream* log) {
  ModelConfig mc = config.model;
  mc.mode = row.mode;
  FinetuneConfig fc = config.finetune;
  fc.seed = derive_seed(seed, 0x6674ULL);
  const std::uint64_t model_seed = derive_seed(seed, 0x6d6f64656cULL);
  std::optional<std::filesystem::path> cell_dir;
  if (out_dir) cell_dir = *out_dir / row.id / ("seed" + std::to_string(seed));

  SegmentationModel<T> seg(mc, fc, model_seed);
  if (row.pretrained) {
    PretrainConfig pc = config.pretrain;
    pc.augment = row.ssa;
    pc.seed = derive_seed(seed, 0x7074ULL);
    PretrainOutputs po;
    if (cell_dir) po.dir = *cell_dir / "pretrain";
    po.config = {{"model", model_json(mc)}, {"pretrain", pc}};
    const auto pr = pretrain(seg.backbone(), data.pretrain, data.pretrain_val, pc, po);
    if (log)
      *log << row.id << " seed " << seed << ": pretrain val masked MAE "
           << format_number(pr.history.front().val_loss) << " -> "
           << format_number(pr.history.back().val_loss) << '\n';
  }
  seg.apply_freeze(row.pretrained);
  FinetuneOutputs fo;
  if (cell_dir) fo.dir = *cell_dir / "finetune";
  fo.config = {{"model", model_json(mc)}, {"finetune", fc}};
  const std::span<const MultispectralSample> val =
      data.val.empty() ? std::span<const MultispectralSample>() : data.val;
  finetune(seg, data.sources, val, fc, fo);

  CellResult cell;
  cell.row = row.id;
  cell.seed = seed;
  cell.val_iou = data.val.empty() ? std::nan("") : evaluate(seg, data.val).micro_iou();
  for (const auto& e : data.eval) cell.eval_iou.push_back(evaluate(seg, e).micro_iou());
  if (log) {
    *log << row.id << " seed " << seed << ":";
    if (!data.val.empty()) *log << " val " << format_number(cell.val_iou);
    for (std::size_t i = 0; i < cell.eval_iou.size(); ++i)
      *log << ' ' << config.eval[i].name << ' ' << format_number(cell.eval_iou[i]);
    *log << std::endl;
  }
  return cell;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::ostream* log, bool double_precision) {
  require(!config.train.empty(), "config has no experiment section");
  if (out_dir) std::filesystem::create_directories(*out_dir);
  const Datasets data = build_datasets(config, log);
  ExperimentResult result;
  result.hash = config.hash();
  for (const auto& e : config.eval) result.eval_names.push_back(e.name);
  for (const auto& row : config.rows)
    for (std::uint64_t seed : config.seeds)
      result.cells.push_back(double_precision
                                 ? run_cell<double>(config, data, row, seed, out_dir, log)
                                 : run_cell<float>(config, data, row, seed, out_dir, log));
  if (out_dir) {
    write_text(*out_dir / "results.csv", results_table_csv(config, result));
    write_text(*out_dir / "results_per_seed.csv", results_per_seed_csv(config, result));
  }
  return result;
}

ExperimentResult run_zero_shot(const ExperimentConfig& config,
                               const std::optional<std::filesystem::path>& out_dir,
                               std::ostream* log, bool double_precision) {
  require(config.kind == ExperimentKind::ZeroShot, "config is not a zero-shot experiment");
  return run_experiment(config, out_dir, log, double_precision);
}

ExperimentResult run_multi_sensor(const ExperimentConfig& config,
                                  const std::optional<std::filesystem::path>& out_dir,
                                  std::ostream* log, bool double_precision) {
  require(config.kind == ExperimentKind::MultiSensor, "config is not a multi-sensor experiment");
  return run_experiment(config, out_dir, log, double_precision);
}

namespace {

std::vector<std::string> row_prefix(const RowSpec& row) {
  const std::string spe = row.mode == EncodingMode::Base   ? ""
                          : row.mode == EncodingMode::Spe1 ? "1"
                                                           : "2";
  return {row.id, row.mode == EncodingMode::Base ? "BaseMAE" : "SenPa-MAE",
          row.pretrained ? "1" : "0", spe, row.ssa ? "1" : "0"};
}

}  // namespace

std::string results_table_csv(const ExperimentConfig& config, const ExperimentResult& result) {
  std::vector<std::string> header{"row", "backbone", "pretrained", "sensor_parameter_encoding",
                                  "ssa"};
  const bool with_val = config.kind == ExperimentKind::ZeroShot;
  if (with_val) {
    header.push_back("val_" + column_name(config.train[0].name) + "_mean");
    header.push_back("val_" + column_name(config.train[0].name) + "_std");
  }
  for (const auto& name : result.eval_names) {
    header.push_back(column_name(name) + "_mean");
    header.push_back(column_name(name) + "_std");
  }
  header.push_back("seeds");
  header.push_back("config_hash");
  std::string text = csv_row(header) + '\n';
  for (const auto& row : config.rows) {
    std::vector<double> val;
    std::vector<std::vector<double>> evals(result.eval_names.size());
    for (const auto& cell : result.cells) {
      if (cell.row != row.id) continue;
      val.push_back(cell.val_iou);
      for (std::size_t i = 0; i < evals.size(); ++i) evals[i].push_back(cell.eval_iou[i]);
    }
    auto fields = row_prefix(row);
    if (with_val) {
      const auto [m, s] = mean_std(val);
      fields.push_back(format_number(m));
      fields.push_back(format_number(s));
    }
    for (const auto& e : evals) {
      const auto [m, s] = mean_std(e);
      fields.push_back(format_number(m));
      fields.push_back(format_number(s));
    }
    fields.push_back(std::to_string(val.size()));
    fields.push_back(result.hash);
    text += csv_row(fields) + '\n';
  }
  return text;
}

std::string results_per_seed_csv(const ExperimentConfig& config, const ExperimentResult& result) {
  std::vector<std::string> header{"row", "backbone", "pretrained", "sensor_parameter_encoding",
                                  "ssa", "seed"};
  const bool with_val = config.kind == ExperimentKind::ZeroShot;
  if (with_val) header.push_back("val_" + column_name(config.train[0].name));
  for (const auto& name : result.eval_names) header.push_back(column_name(name));
  header.push_back("config_hash");
  std::string text = csv_row(header) + '\n';
  for (const auto& cell : result.cells) {
    const RowSpec row = parse_row(cell.row);
    auto fields = row_prefix(row);
    fields.push_back(std::to_string(cell.seed));
    if (with_val) fields.push_back(format_number(cell.val_iou));
    for (double v : cell.eval_iou) fields.push_back(format_number(v));
    fields.push_back(result.hash);
    text += csv_row(fields) + '\n';
  }
  return text;
}

template <typename T>
void emit_figures(const SenpaMae<T>& model, const MultispectralSample& sample, std::uint64_t seed,
                  const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  Rng rng(seed);
  dump_reconstruction(model, sample, rng, out_dir, "fig");
  // Same stream again gives the same mask; record it for cross-checking.
  Rng replay(seed);
  nn::NoGradGuard no_grad;
  const auto out = model.forward_mae(sample, replay);
  {
    std::ofstream csv(out_dir / "mask.csv", std::ios::trunc);
    csv << "token,channel,row,col,masked\n";
    const std::size_t g = model.config().grid();
    for (std::size_t t = 0; t < out.mask.tokens; ++t)
      csv << t << ',' << t / (g * g) << ',' << (t % (g * g)) / g << ',' << t % g << ','
          << static_cast<int>(out.mask.is_masked[t]) << '\n';
  }
  for (std::size_t c = 0; c < sample.channels(); ++c) {
    std::ofstream csv(out_dir / ("fig_c" + std::to_string(c) + "_srf.csv"), std::ios::trunc);
    csv << "wavelength_nm,response\n";
    const auto v = sample.params[c].srf.values();
    for (std::size_t k = 0; k < v.size(); ++k)
      csv << kSrfFirstNm + k << ',' << format_number(v[k]) << '\n';
  }
}

template void emit_figures<float>(const SenpaMae<float>&, const MultispectralSample&, std::uint64_t,
                                  const std::filesystem::path&);
template void emit_figures<double>(const SenpaMae<double>&, const MultispectralSample&,
                                   std::uint64_t, const std::filesystem::path&);

}  // namespace senpa
