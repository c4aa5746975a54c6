#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "entlab/corpus.hpp"
#include "entlab/nanoformer.hpp"

namespace entlab {

struct Site {
  enum class Kind { kResidual, kHead };
  Kind kind = Kind::kResidual;
  int layer = 0;
  int head = 0;

  static Site residual(int layer) { return {Kind::kResidual, layer, 0}; }
  static Site attention_head(int layer, int head) { return {Kind::kHead, layer, head}; }
  std::string describe() const;
};

struct PositionRule {
  enum class Kind { kLastToken, kAllPositions, kTokenEquals, kAtPosition };
  Kind kind = Kind::kLastToken;
  int value = 0;         // token for kTokenEquals, position for kAtPosition
  int min_position = 1;  // kAllPositions skips the BOS position by default

  static PositionRule last_token() { return {Kind::kLastToken, 0, 0}; }
  static PositionRule all_positions(int min_position = 1) { return {Kind::kAllPositions, 0, min_position}; }
  static PositionRule token_equals(int token) { return {Kind::kTokenEquals, token, 0}; }
  static PositionRule at_position(int k) { return {Kind::kAtPosition, k, 0}; }
};

struct ActivationRow {
  std::vector<double> x;
  std::size_t example = 0;
  int position = 0;
  int token = 0;
  FeatureId feature;
};

// Captured activations for every distinct sequence of a dataset. The model is
// only read; identical sequences share one forward pass.
class ActivationCache {
 public:
  ActivationCache(const ModelState& model, const Dataset& data);

  const ModelState& model() const { return *model_; }
  const Dataset& data() const { return *data_; }
  const ActivationRecord& record_for(std::size_t example) const;

 private:
  const ModelState* model_;
  const Dataset* data_;
  std::map<std::vector<int>, ActivationRecord> records_;
  std::vector<const ActivationRecord*> by_example_;
};

void check_site(const ModelConfig& cfg, const Site& site);

std::vector<ActivationRow> collect_activations(const ActivationCache& cache, const Site& site,
                                               const PositionRule& rule);
std::vector<ActivationRow> collect_activations(const ModelState& model, const Dataset& data, const Site& site,
                                               const PositionRule& rule);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
};

// 4:1 train/validation sizes for n rows.
SplitCounts split_counts(std::size_t n, double train_fraction = 0.8);

struct ProbeDataset {
  Site site;
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  double train_fraction = 0.8;

  std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }
};

// Stratified, seeded 4:1 split. Rejects data with fewer than 2 rows of either class.
ProbeDataset make_probe_dataset(const Site& site, std::vector<std::vector<double>> x, std::vector<int> y,
                                std::uint64_t seed, double train_fraction = 0.8);

struct ProbeConfig {
  double l2 = 1e-3;
  int iterations = 2000;
};

struct ProbeResult {
  std::vector<double> w;
  double b = 0.0;
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
  Site site;
};

// L2-regularized logistic regression fit by full-batch gradient descent on the
// training split; accuracy is measured on the validation split.
ProbeResult fit_probe(const ProbeDataset& data, const ProbeConfig& cfg = {});

struct FeatureDirection {
  FeatureId feature;
  std::vector<double> v;
  int layer = 0;
  std::vector<int> tokens_used;
  std::vector<int> tokens_skipped;
  double mean_accuracy = 0.0;
};

// Unit vector for `feature` at a residual layer: one probe per current token t
// separating the feature from every other feature at t, each weight normalized,
// then averaged and renormalized.
FeatureDirection feature_direction(const ActivationCache& cache, const FeatureId& feature, int layer,
                                   std::uint64_t seed, const ProbeConfig& cfg = {});

struct LayerChoice {
  int layer = 0;
  std::vector<double> mean_accuracy;  // per layer
};

// Residual layer whose token-conditioned feature probes have the highest mean
// validation accuracy (lowest index on ties).
LayerChoice select_direction_layer(const ActivationCache& cache, std::uint64_t seed, const ProbeConfig& cfg = {});

struct DirectionSet {
  LayerChoice layer;
  std::vector<FeatureDirection> directions;  // present features in feature-index order
};

DirectionSet feature_directions(const ActivationCache& cache, std::uint64_t seed, const ProbeConfig& cfg = {});

using Labeler = std::function<int(const Example&)>;

struct HeadProbe {
  int layer = 0;
  int head = 0;
  ProbeResult result;
  ProbeDataset data;
};

struct HeadTable {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<HeadProbe> probes;  // layer-major

  double accuracy(int layer, int head) const { return probes[static_cast<std::size_t>(layer) * n_heads + head].result.val_accuracy; }
  std::vector<double> distribution() const;
  double right_tail_mass(double threshold = 0.9) const;
};

HeadTable head_accuracy_table(const ActivationCache& cache, const Labeler& label, std::uint64_t seed,
                              const PositionRule& rule = PositionRule::last_token(), const ProbeConfig& cfg = {});

// Residual-stream probes (one per layer) for the same labels; used for verbalization.
std::vector<ProbeResult> residual_probes(const ActivationCache& cache, const Labeler& label, std::uint64_t seed,
                                         const PositionRule& rule = PositionRule::last_token(),
                                         const ProbeConfig& cfg = {});

struct LensEntry {
  int rank = 0;
  int token = 0;
  double score = 0.0;
};

// Tokens by descending dot product of their unembedding row with `direction`;
// ties go to the lower token id.
std::vector<LensEntry> logit_lens(std::span<const double> direction, const ModelState& model, int k);

void write_head_acc_csv(const HeadTable& table, const std::filesystem::path& path);
void write_directions_csv(const DirectionSet& dirs, int num_states, const std::filesystem::path& path);
void write_logit_lens_csv(std::span<const LensEntry> entries, const std::filesystem::path& path);

}  // namespace entlab
