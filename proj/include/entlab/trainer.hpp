#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "entlab/corpus.hpp"
#include "entlab/error.hpp"
#include "entlab/nanoformer.hpp"

namespace entlab {

struct TrainConfig {
  int steps = 10000;
  int batch_size = 64;
  double lr = 1e-3;
  std::string schedule = "constant";  // "constant" or "cosine"
  int eval_every = 500;
  double tau = 0.05;  // convergence gate, nats
  std::uint64_t seed = 0;
  double divergence_factor = 10.0;
  int divergence_window = 500;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class ChainSelect { kAll, kControl, kTarget };

// Selects predictions by input position (position k predicts token k+1; 0 is
// the BOS position) and by the example's chain role.
struct PositionFilter {
  int min_position = 0;
  int max_position = -1;  // inclusive; negative means no upper bound
  ChainSelect chains = ChainSelect::kAll;

  bool selects_chain(const CorpusConfig& cfg, int chain_id) const;
  bool selects_position(int k) const { return k >= min_position && (max_position < 0 || k <= max_position); }
};

struct LossPoint {
  int step = 0;
  double loss = 0.0;
  bool operator==(const LossPoint&) const = default;
};

struct RunRecord {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  double initial_loss = 0.0;
  double final_train_loss = 0.0;
  double heldout_ce = 0.0;
  double bayes_heldout_ce = 0.0;
  double control_ce = 0.0;        // control chains, positions >= 2
  double bayes_control_ce = 0.0;  // Bayes predictor on the same selection
  std::vector<LossPoint> loss_curve;
  std::string checkpoint_path;
  double wall_clock_seconds = 0.0;
  bool converged = false;
  bool diverged = false;
  std::string diagnostic;

  bool operator==(const RunRecord&) const = default;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, RunRecord record)
      : Error(ErrorCode::kDiverged, what), record_(std::move(record)) {}
  const RunRecord& record() const { return record_; }

 private:
  RunRecord record_;
};

struct TrainResult {
  ModelState model;
  RunRecord record;
};

TrainResult train(const Dataset& corpus, const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Mean next-token cross-entropy (nats) over the selected predictions.
double eval_ce(const ModelState& model, const Dataset& heldout, const PositionFilter& filter,
               std::span<const HeadShift> shifts = {});

// Cross-entropy of the Bayes-optimal predictor for `mixture`'s empirical
// distribution, evaluated on the selected predictions of `eval`. When the
// selection covers every example of each prefix it reaches, this is the
// minimum any model can achieve on `eval`.
double bayes_optimal_ce(const Dataset& mixture, const Dataset& eval, const PositionFilter& filter);

// The held-out set used by `train`: the training recipe, re-materialized.
Dataset heldout_for(const Dataset& corpus, std::uint64_t train_seed);

}  // namespace entlab
