#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entlab/corpus.hpp"
#include "entlab/nanoformer.hpp"
#include "entlab/probelab.hpp"

namespace entlab {

// Intervention strengths: weak, medium, strong.
inline constexpr double kSteerWeak = 4.0;
inline constexpr double kSteerMedium = 8.0;
inline constexpr double kSteerStrong = 12.0;

struct SteerEntry {
  int layer = 0;
  int head = 0;
  double accuracy = 0.0;
  std::vector<double> direction;  // unit vector in head space
  double sigma = 0.0;             // std of training activations projected on `direction`
};

struct SteeringPlan {
  std::vector<SteerEntry> entries;  // descending probe accuracy
  double alpha = 0.0;
  int sign = -1;  // +1 promotes the probed attribute, -1 suppresses it

  std::size_t k() const { return entries.size(); }
  // sign * alpha * sigma * direction per entry; entries with zero magnitude are dropped.
  std::vector<HeadShift> shifts() const;
};

// Top-K heads by validation accuracy (ties: lower layer, then lower head).
SteeringPlan build_plan(const HeadTable& table, int k, double alpha, int sign);

// Population standard deviation of the projections of `rows` onto `direction`.
double projection_sigma(std::span<const std::vector<double>> rows, std::span<const double> direction);

// Autoregressive sampling from `prompt` for `steps` tokens with the plan's
// head shifts active at every position. Temperature 0 is greedy. Returns the
// prompt followed by the generated tokens.
std::vector<int> steered_generate(const ModelState& model, const SteeringPlan& plan, std::span<const int> prompt,
                                  int steps, double temperature, std::uint64_t seed);

// The chain whose successor function matches at least `min_match` of the
// observed transitions, with the highest match fraction. nullopt when no chain
// qualifies or the best fraction is shared.
std::optional<int> classify_continuation(std::span<const int> tokens, std::span<const ChainSpec> chains,
                                         double min_match = 1.0);

struct GenerationEval {
  std::size_t n_samples = 0;
  std::size_t target_count = 0;
  double target_rate = 0.0;
  std::size_t target_count_loose = 0;  // min_match 0.75
  double target_rate_loose = 0.0;
  double heldout_ce = 0.0;  // control chains, all positions, plan active
  double temperature = 1.0;
  std::string prompt = "BOS";
};

struct SteerEvalConfig {
  std::size_t n_samples = 1000;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  double min_match = 1.0;
  double min_match_loose = 0.75;
};

// Generates from BOS for V tokens per sample and classifies each continuation;
// `heldout` supplies the chains and the control-chain CE evaluation set.
GenerationEval eval_steering(const ModelState& model, const SteeringPlan& plan, const Dataset& heldout,
                             const SteerEvalConfig& cfg);

}  // namespace entlab
