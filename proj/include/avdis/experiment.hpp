#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <iosfwd>
#include <string>
#include <vector>

#include "avdis/data.hpp"
#include "avdis/metrics.hpp"
#include "avdis/model.hpp"
#include "avdis/strategies.hpp"

namespace avdis {

// Everything one experiment needs. Loaded from a JSON file; every key is
// optional and falls back to the defaults below. Model dims and label counts
// are taken from the dataset header at training time.
struct ExperimentConfig {
  std::filesystem::path output_dir = "avdis_out";
  std::filesystem::path dataset;  // empty: <output_dir>/dataset.jsonl
  SyntheticSpec synthetic;
  ModelConfig model;
  std::vector<Strategy> strategies{Strategy::STL, Strategy::MTL, Strategy::GR, Strategy::ALT,
                                   Strategy::CONF};
  std::vector<std::size_t> speaker_dims{64, 16, 8};
  std::vector<std::uint64_t> seeds{1};
  StrategyConfig training;  // strategy and seed are set per cell
  ProbeConfig probe;
  std::optional<double> filter_percentile;  // applied to loaded datasets
  std::size_t workers = 1;

  std::filesystem::path dataset_path() const;
  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

// Desk-scale benchmark settings: entangled corpus (rho = 0.8, 20 speakers,
// 5 emotions, 40 clips per speaker) with learning rates sized for its budget.
ExperimentConfig standard_benchmark();

struct CellId {
  Strategy strategy = Strategy::MTL;
  std::size_t speaker_dim = 64;
  std::uint64_t seed = 1;

  std::string name() const;  // e.g. "MTL_d64_s1"
};

std::vector<CellId> sweep_cells(const ExperimentConfig& config);

// Model config for one cell on a dataset with the given header.
ModelConfig cell_model_config(const ExperimentConfig& config, const DatasetHeader& header,
                              const CellId& cell);
StrategyConfig cell_strategy_config(const ExperimentConfig& config, const CellId& cell);
ProbeConfig cell_probe_config(const ExperimentConfig& config, const CellId& cell);

// Counts of (speaker, emotion) pairs as a text table.
std::string label_joint_summary(const Dataset& dataset);

// Loads the configured dataset and applies the optional percentile filter.
Dataset load_experiment_dataset(const ExperimentConfig& config);

void cmd_gen_data(const ExperimentConfig& config, std::ostream& log);

struct TrainSummary {
  std::size_t completed = 0;
  std::size_t skipped = 0;
};
// Trains every sweep cell not already completed under <out>/cells/. Cells run
// on up to config.workers threads. Throws the first cell failure after all
// cells have been attempted.
TrainSummary cmd_train(const ExperimentConfig& config, std::ostream& log);

// Re-runs the probes for every trained cell with the current probe settings.
std::size_t cmd_probe(const ExperimentConfig& config, std::ostream& log);

// Writes <out>/report/{emotion_f,leakage_f,speaker_accuracy,stuart_maxwell}.csv
// and summary.json from the completed cells.
void cmd_report(const std::filesystem::path& output_dir, std::ostream& log);

std::filesystem::path cell_dir(const std::filesystem::path& output_dir, const CellId& cell);

}  // namespace avdis
