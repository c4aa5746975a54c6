#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "entlab/corpus.hpp"
#include "entlab/geometry.hpp"
#include "entlab/nanoformer.hpp"
#include "entlab/probelab.hpp"
#include "entlab/trainer.hpp"

namespace entlab {

struct SweepConfig {
  std::vector<double> grid{0.0, 0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.00};
  int seeds = 10;
  std::uint64_t master_seed = 0;
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  std::vector<double> strengths{4.0, 8.0, 12.0};
  int k_heads = 4;
  int gen_samples = 1000;
  double temperature = 1.0;
  // Copies per control feature in the composition-matched corpus used for
  // feature directions; large enough that the rarest target feature still
  // has rows on both sides of the split.
  int direction_probe_copies = 200;
  // Copies per feature (all chains) in the labeled set for head probes.
  int head_probe_copies = 10;
  ProbeConfig probe;
  int bootstrap_n = 10000;
  double tail_threshold = 0.9;
  std::string out_dir = "sweep_out";
  int jobs = 1;

  void validate() const;
  std::size_t num_cells() const { return grid.size() * static_cast<std::size_t>(seeds); }
};

struct SteerRow {
  double alpha = 0.0;
  int k = 0;
  int sign = 0;  // 0 marks the unsteered baseline
  std::size_t n_samples = 0;
  std::size_t target_count = 0;
  double target_rate = 0.0;
  double target_rate_loose = 0.0;
  double heldout_ce = 0.0;
};

struct FeatureEntanglement {
  int feature_id = 0;
  bool is_target = false;
  double e = 0.0;
};

struct CellResult {
  int p_index = 0;
  int replicate = 0;
  double composition_p = 0.0;
  std::uint64_t cell_seed = 0;
  bool ok = false;
  std::string diagnostic;
  RunRecord run;
  int direction_layer = 0;
  std::vector<double> layer_mean_accuracy;
  std::vector<FeatureEntanglement> entanglement;
  double target_mean = 0.0;  // NaN when the target chain is absent
  double control_mean = 0.0;
  double max_e = 0.0;
  double welch = 0.0;
  std::vector<double> head_accuracy;  // layer-major
  double right_tail = 0.0;
  std::vector<SteerRow> steering;
  bool trained = false;  // false when loaded from a previous run
};

struct CurvePoint {
  double composition_p = 0.0;
  int n_cells = 0;
  int n_converged = 0;  // cells passing the trainer's convergence gate
  double target_e_mean = 0.0, target_e_std = 0.0;
  double control_e_mean = 0.0, control_e_std = 0.0;
  double unsteered_rate_mean = 0.0, unsteered_rate_std = 0.0;
  std::vector<double> steered_rate_mean, steered_rate_std;  // per strength
  double heldout_ce_mean = 0.0, heldout_ce_std = 0.0;
};

struct SweepReport {
  SweepConfig config;
  std::vector<CellResult> cells;  // grid-major, replicate-minor
  std::vector<CurvePoint> curves;
  bool has_head_comparison = false;
  StatsResult head_comparison;  // head accuracies: lowest vs highest composition
  std::vector<std::string> files;
  std::size_t cells_trained = 0;

  std::size_t failed_cells() const;
};

std::uint64_t cell_seed(std::uint64_t master_seed, int p_index, int replicate);
std::filesystem::path cell_dir(const std::filesystem::path& out, int p_index, int replicate);

// Builds, trains, probes and steers one grid cell, writing into its directory.
// Errors are captured in the result rather than thrown.
CellResult run_cell(const SweepConfig& cfg, int p_index, int replicate);

// Every cell (in parallel up to cfg.jobs), skipping cells whose outputs are
// already complete, then aggregate().
SweepReport run_sweep(const SweepConfig& cfg,
                      const std::function<void(const std::string&)>& progress = {});

// Curves, CSVs, plots and statistics from the cell results in cfg.out_dir.
SweepReport aggregate(const SweepConfig& cfg, std::vector<CellResult> cells);
// Re-reads every cell under `out_dir` (using its saved sweep.json) and aggregates.
SweepReport aggregate_directory(const std::filesystem::path& out_dir);

nlohmann::json cell_to_json(const CellResult& c);
CellResult cell_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

}  // namespace entlab
