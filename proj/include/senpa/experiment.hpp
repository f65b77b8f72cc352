#pragma once

// Experiment orchestration: synthetic dataset generation, the zero-shot and
// multi-sensor segmentation grids, and figure emission. Experiments are pure
// data; everything here only interprets an ExperimentConfig.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "senpa/finetune.hpp"
#include "senpa/pretrain.hpp"
#include "senpa/scene.hpp"

namespace senpa {

/// A named channel selection of one sensor, or (random_from non-empty) a
/// per-scene random draw of `random_channels` channels from one of several
/// sensors with equal probability.
struct Arrangement {
  std::string name;
  std::string sensor;
  std::vector<std::size_t> channels;
  std::vector<std::string> random_from;
  std::size_t random_channels = 4;
};

struct DataConfig {
  std::size_t size = 48;
  std::size_t classes = 8;
  std::vector<std::string> pretrain_sensors;
  std::size_t pretrain_scenes = 200;
  std::size_t pretrain_val_scenes = 32;
  std::size_t finetune_scenes = 160;
  std::size_t val_scenes = 48;
  std::uint64_t scene_seed = 0;
  SceneOptions scene;
  /// Endmember amplitude; calibrated over all configured sensors when unset.
  std::optional<double> amplitude;
  std::size_t calibration_scenes = 1000;
};

/// One table row: backbone encoding, whether it is pretrained, and whether
/// the augmentation module is active during pretraining.
struct RowSpec {
  std::string id;
  EncodingMode mode = EncodingMode::Spe2;
  bool pretrained = true;
  bool ssa = false;
};

RowSpec parse_row(const std::string& id);

enum class ExperimentKind { ZeroShot, MultiSensor };

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ZeroShot;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::map<std::string, SensorSpec> sensors;
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  /// Zero-shot: exactly one arrangement. Multi-sensor: the training sources.
  std::vector<Arrangement> train;
  std::vector<Arrangement> eval;
  std::vector<RowSpec> rows;
  /// Canonical JSON the config was parsed from (sensor files inlined).
  nlohmann::json canonical;

  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;
};

/// Sensor paths are resolved relative to `base_dir`.
ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Seed of scene `index` in split `split` (distinct splits never share scenes).
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t split, std::size_t index);

enum SceneSplit : std::uint64_t {
  kPretrainSplit = 1,
  kPretrainValSplit = 2,
  kFinetuneSplit = 3,
  kValSplit = 4,
};

struct ChannelDraw {
  std::string sensor;
  std::vector<std::size_t> channels;
};

/// The sensor and channels a scene is rendered through. Fixed arrangements
/// return themselves; random ones draw a sensor with equal probability and
/// then distinct channels, from a stream derived from the scene seed.
ChannelDraw draw_channels(const Arrangement& arrangement,
                          const std::map<std::string, SensorSpec>& sensors,
                          std::uint64_t scene_seed);

/// Renders `count` scenes of `split` through an arrangement.
std::vector<MultispectralSample> render_arrangement(const ExperimentConfig& config,
                                                    const Arrangement& arrangement,
                                                    std::uint64_t split, std::size_t count);

/// Pretraining scenes, each rendered through all channels of one of the
/// pretraining sensors (cycled).
std::vector<MultispectralSample> render_pretrain_set(const ExperimentConfig& config,
                                                     std::uint64_t split, std::size_t count);

/// Effective scene options with the calibrated amplitude filled in.
SceneOptions effective_scene_options(const ExperimentConfig& config);

struct CellResult {
  std::string row;
  std::uint64_t seed = 0;
  double val_iou = 0.0;
  /// One entry per evaluation arrangement, in config order.
  std::vector<double> eval_iou;
};

struct ExperimentResult {
  std::string hash;
  std::vector<std::string> eval_names;
  std::vector<CellResult> cells;
};

/// Runs every (row, seed) cell. With an output directory, checkpoints and
/// metrics for each cell plus results.csv (mean and std per row) and
/// results_per_seed.csv are written there. Progress lines go to `log`.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::ostream* log, bool double_precision = false);

ExperimentResult run_zero_shot(const ExperimentConfig& config,
                               const std::optional<std::filesystem::path>& out_dir,
                               std::ostream* log, bool double_precision = false);
ExperimentResult run_multi_sensor(const ExperimentConfig& config,
                                  const std::optional<std::filesystem::path>& out_dir,
                                  std::ostream* log, bool double_precision = false);

/// CSV text of the aggregated table and of the per-seed numbers.
std::string results_table_csv(const ExperimentConfig& config, const ExperimentResult& result);
std::string results_per_seed_csv(const ExperimentConfig& config, const ExperimentResult& result);

/// Sample mean and (n - 1) standard deviation; std is 0 for one value.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Per-channel mask / reconstruction / ground-truth PGMs of one rendered
/// scene, the mask record as CSV and each channel's SRF as CSV.
template <typename T>
void emit_figures(const SenpaMae<T>& model, const MultispectralSample& sample, std::uint64_t seed,
                  const std::filesystem::path& out_dir);

}  // namespace senpa
