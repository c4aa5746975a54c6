#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace entlab {

// A single-cycle permutation over the shared state space {0..V-1}.
// `cycle` is stored rotated so that it starts at state 0.
struct ChainSpec {
  int chain_id = 0;
  std::vector<int> cycle;

  int num_states() const { return static_cast<int>(cycle.size()); }
  std::vector<int> successors() const;
  // Row-major V x V 0/1 matrix.
  std::vector<int> transition_matrix() const;
  // Throws unless `cycle` is a permutation of {0..V-1} with a single orbit.
  void validate() const;

  bool operator==(const ChainSpec& o) const { return cycle == o.cycle; }
};

using Cycle = std::vector<int>;

// Rotates a cycle so it starts at 0; identity for well-formed input that already does.
Cycle canonical_cycle(const Cycle& cycle);

// Number of distinct single cycles on V states, (V-1)!.
std::uint64_t count_single_cycles(int num_states);

ChainSpec generate_chain(std::uint64_t seed, int num_states, const std::set<Cycle>& forbidden,
                         int chain_id = 0);

// Deterministic rotation of the chain's cycle beginning at `start`.
std::vector<int> sample_sequence(const ChainSpec& chain, int start, int length);

struct FeatureId {
  int chain_id = 0;
  int start_state = 0;

  int index(int num_states) const { return chain_id * num_states + start_state; }
  auto operator<=>(const FeatureId&) const = default;
};

struct CorpusConfig {
  int num_states = 4;
  int num_chains = 3;
  int copies_per_feature = 100;
  double composition_p = 1.0;
  int target_chain = 0;
  std::uint64_t seed = 0;
  // Sequence length in state tokens; 0 means one full period (V).
  int sequence_length = 0;

  int bos_token() const { return num_states; }
  int vocab_size() const { return num_states + 1; }
  int body_length() const { return sequence_length > 0 ? sequence_length : num_states; }
  int num_features() const { return num_states * num_chains; }
  // Copies of each target-chain feature, round-half-to-even of p*C.
  int target_copies() const;
  int copies_for_chain(int chain_id) const;
  void validate() const;
  bool operator==(const CorpusConfig&) const = default;
};

struct Example {
  std::vector<int> tokens;  // BOS followed by the state tokens
  FeatureId feature;
};

struct Dataset {
  CorpusConfig config;
  std::vector<ChainSpec> chains;
  std::vector<Example> examples;
  std::vector<std::string> warnings;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  std::size_t count_feature(const FeatureId& f) const;
  bool contains_feature(const FeatureId& f) const { return count_feature(f) > 0; }
};

// The chains a config describes: chain k is drawn from hash64(seed, k), distinct from 0..k-1.
std::vector<ChainSpec> build_chains(const CorpusConfig& config);

Dataset build_dataset(const CorpusConfig& config);

// `copies` copies of every feature whose chain appears in `source`, in a fixed
// order. Used for held-out evaluation and probing.
Dataset materialize_features(const Dataset& source, int copies, bool include_absent_chains,
                             std::uint64_t shuffle_seed);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Same chains and per-feature counts as `source`, freshly materialized and
// shuffled with `shuffle_seed`.
Dataset resample_like(const Dataset& source, std::uint64_t shuffle_seed);

// Newline-delimited "feature_id,chain_id,start,tokens..." records.
std::string serialize_examples(const Dataset& data);

}  // namespace entlab
