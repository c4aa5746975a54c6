#include "entlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "entlab/error.hpp"
#include "entlab/io.hpp"
#include "entlab/rng.hpp"

namespace entlab {

std::vector<int> ChainSpec::successors() const {
  const int v = num_states();
  std::vector<int> succ(v);
  for (int k = 0; k < v; ++k) succ[cycle[k]] = cycle[(k + 1) % v];
  return succ;
}

std::vector<int> ChainSpec::transition_matrix() const {
  const int v = num_states();
  std::vector<int> m(static_cast<std::size_t>(v) * v, 0);
  const auto succ = successors();
  for (int s = 0; s < v; ++s) m[static_cast<std::size_t>(s) * v + succ[s]] = 1;
  return m;
}

void ChainSpec::validate() const {
  const int v = num_states();
  if (v < 2) fail(ErrorCode::kInvalidArgument, "chain needs at least 2 states");
  std::vector<char> seen(v, 0);
  for (int s : cycle) {
    if (s < 0 || s >= v || seen[s]) fail(ErrorCode::kInvalidArgument, "chain cycle is not a permutation");
    seen[s] = 1;
  }
  // Listing every state once in order is one orbit by construction; check the
  // successor map anyway since callers may build cycles by hand.
  const auto succ = successors();
  int s = 0, steps = 0;
  do {
    s = succ[s];
    ++steps;
  } while (s != 0 && steps <= v);
  if (steps != v) fail(ErrorCode::kInvalidArgument, "chain is not a single cycle");
}

Cycle canonical_cycle(const Cycle& cycle) {
  auto it = std::find(cycle.begin(), cycle.end(), 0);
  if (it == cycle.end()) return cycle;
  Cycle out(it, cycle.end());
  out.insert(out.end(), cycle.begin(), it);
  return out;
}

std::uint64_t count_single_cycles(int num_states) {
  std::uint64_t n = 1;
  for (int k = 2; k < num_states; ++k) n *= static_cast<std::uint64_t>(k);
  return n;
}

namespace {

// Small state spaces are enumerated so exhaustion is detected exactly.
constexpr int kEnumerateUpTo = 8;

std::vector<Cycle> allowed_cycles(int v, const std::set<Cycle>& forbidden) {
  std::vector<Cycle> out;
  std::vector<int> tail(v - 1);
  std::iota(tail.begin(), tail.end(), 1);
  do {
    Cycle c{0};
    c.insert(c.end(), tail.begin(), tail.end());
    if (!forbidden.count(c)) out.push_back(std::move(c));
  } while (std::next_permutation(tail.begin(), tail.end()));
  return out;
}

}  // namespace

ChainSpec generate_chain(std::uint64_t seed, int num_states, const std::set<Cycle>& forbidden, int chain_id) {
  require(num_states >= 2, "generate_chain: V must be >= 2");
  std::set<Cycle> canon;
  for (const auto& c : forbidden) canon.insert(canonical_cycle(c));

  Rng rng(seed);
  ChainSpec chain;
  chain.chain_id = chain_id;
  if (num_states <= kEnumerateUpTo) {
    auto options = allowed_cycles(num_states, canon);
    if (options.empty())
      fail(ErrorCode::kExhausted, "generate_chain: all " + std::to_string(count_single_cycles(num_states)) +
                                      " cycles of length " + std::to_string(num_states) + " are forbidden");
    chain.cycle = options[uniform_index(rng, options.size())];
  } else {
    Cycle c(num_states);
    std::iota(c.begin(), c.end(), 0);
    do {
      shuffle(c.begin() + 1, c.end(), rng);
    } while (canon.count(c));
    chain.cycle = c;
  }
  return chain;
}

std::vector<int> sample_sequence(const ChainSpec& chain, int start, int length) {
  const int v = chain.num_states();
  require(start >= 0 && start < v, "sample_sequence: start state out of range");
  require(length >= 1, "sample_sequence: length must be >= 1");
  const auto succ = chain.successors();
  std::vector<int> out(length);
  int s = start;
  for (int k = 0; k < length; ++k) {
    out[k] = s;
    s = succ[s];
  }
  return out;
}

int CorpusConfig::target_copies() const {
  return static_cast<int>(std::nearbyint(composition_p * copies_per_feature));
}

int CorpusConfig::copies_for_chain(int chain_id) const {
  return chain_id == target_chain ? target_copies() : copies_per_feature;
}

void CorpusConfig::validate() const {
  require(num_chains >= 2, "corpus: num_chains must be >= 2");
  require(num_states >= 2, "corpus: V must be >= 2");
  require(copies_per_feature >= 1, "corpus: copies_per_feature must be >= 1");
  require(composition_p >= 0.0 && composition_p <= 1.0, "corpus: composition_p must lie in [0,1]");
  require(target_chain >= 0 && target_chain < num_chains, "corpus: target_chain out of range");
  require(sequence_length >= 0, "corpus: sequence_length must be >= 0");
  if (num_states <= kEnumerateUpTo && static_cast<std::uint64_t>(num_chains) > count_single_cycles(num_states))
    fail(ErrorCode::kExhausted, "corpus: more chains requested than distinct cycles exist");
}

std::size_t Dataset::count_feature(const FeatureId& f) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [&](const Example& e) { return e.feature == f; }));
}

std::vector<ChainSpec> build_chains(const CorpusConfig& config) {
  std::vector<ChainSpec> chains;
  std::set<Cycle> used;
  for (int k = 0; k < config.num_chains; ++k) {
    auto chain = generate_chain(hash64(config.seed, {0x636861696eULL, static_cast<std::uint64_t>(k)}),
                                config.num_states, used, k);
    used.insert(chain.cycle);
    chains.push_back(std::move(chain));
  }
  return chains;
}

namespace {

Example make_example(const CorpusConfig& config, const ChainSpec& chain, int start) {
  Example ex;
  ex.feature = {chain.chain_id, start};
  ex.tokens.reserve(config.body_length() + 1);
  ex.tokens.push_back(config.bos_token());
  for (int s : sample_sequence(chain, start, config.body_length())) ex.tokens.push_back(s);
  return ex;
}

}  // namespace

Dataset build_dataset(const CorpusConfig& config) {
  config.validate();
  Dataset data;
  data.config = config;
  data.chains = build_chains(config);
  if (config.composition_p > 0.0 && config.target_copies() == 0)
    data.warnings.push_back("composition_p * copies_per_feature rounds to 0; target chain absent");

  for (const auto& chain : data.chains) {
    const int copies = config.copies_for_chain(chain.chain_id);
    for (int start = 0; start < config.num_states; ++start) {
      const Example ex = make_example(config, chain, start);
      for (int c = 0; c < copies; ++c) data.examples.push_back(ex);
    }
  }
  Rng rng(hash64(config.seed, {0x73687566ULL}));
  shuffle(data.examples.begin(), data.examples.end(), rng);
  return data;
}

Dataset materialize_features(const Dataset& source, int copies, bool include_absent_chains,
                             std::uint64_t shuffle_seed) {
  require(copies >= 1, "materialize_features: copies must be >= 1");
  Dataset out;
  out.config = source.config;
  out.chains = source.chains;
  for (const auto& chain : source.chains) {
    if (!include_absent_chains && source.config.copies_for_chain(chain.chain_id) == 0) continue;
    for (int start = 0; start < source.config.num_states; ++start) {
      const Example ex = make_example(source.config, chain, start);
      for (int c = 0; c < copies; ++c) out.examples.push_back(ex);
    }
  }
  Rng rng(shuffle_seed);
  shuffle(out.examples.begin(), out.examples.end(), rng);
  return out;
}

Dataset resample_like(const Dataset& source, std::uint64_t shuffle_seed) {
  Dataset out;
  out.config = source.config;
  out.chains = source.chains;
  out.warnings = source.warnings;
  for (const auto& chain : source.chains) {
    const int copies = source.config.copies_for_chain(chain.chain_id);
    for (int start = 0; start < source.config.num_states; ++start) {
      const Example ex = make_example(source.config, chain, start);
      for (int c = 0; c < copies; ++c) out.examples.push_back(ex);
    }
  }
  Rng rng(shuffle_seed);
  shuffle(out.examples.begin(), out.examples.end(), rng);
  return out;
}

std::string serialize_examples(const Dataset& data) {
  std::ostringstream os;
  const int v = data.config.num_states;
  for (const auto& ex : data.examples) {
    os << ex.feature.index(v) << ',' << ex.feature.chain_id << ',' << ex.feature.start_state;
    for (int t : ex.tokens) os << ',' << t;
    os << '\n';
  }
  return os.str();
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "examples.csv", std::ios::binary);
    if (!f) fail(ErrorCode::kIo, "cannot write " + (dir / "examples.csv").string());
    f << serialize_examples(data);
  }
  nlohmann::json side;
  side["config"] = data.config;
  side["chains"] = nlohmann::json::array();
  for (const auto& c : data.chains) side["chains"].push_back({{"chain_id", c.chain_id}, {"cycle", c.cycle}});
  side["warnings"] = data.warnings;
  side["num_examples"] = data.examples.size();
  write_text_file(dir / "corpus.json", side.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto side = nlohmann::json::parse(read_text_file(dir / "corpus.json"));
  Dataset data;
  data.config = side.at("config").get<CorpusConfig>();
  data.config.validate();
  for (const auto& c : side.at("chains")) {
    ChainSpec chain{c.at("chain_id").get<int>(), c.at("cycle").get<std::vector<int>>()};
    chain.validate();
    data.chains.push_back(std::move(chain));
  }
  data.warnings = side.value("warnings", std::vector<std::string>{});

  std::ifstream f(dir / "examples.csv", std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot read " + (dir / "examples.csv").string());
  const int v = data.config.num_states;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<long> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stol(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::kFormat, "examples.csv: bad field '" + cell + "'");
      }
    }
    if (fields.size() < 4) fail(ErrorCode::kFormat, "examples.csv: short record");
    Example ex;
    ex.feature = {static_cast<int>(fields[1]), static_cast<int>(fields[2])};
    if (ex.feature.chain_id < 0 || ex.feature.chain_id >= data.config.num_chains ||
        ex.feature.start_state < 0 || ex.feature.start_state >= v || fields[0] != ex.feature.index(v))
      fail(ErrorCode::kFormat, "examples.csv: inconsistent feature id");
    for (std::size_t k = 3; k < fields.size(); ++k) {
      if (fields[k] < 0 || fields[k] > v) fail(ErrorCode::kFormat, "examples.csv: token out of range");
      ex.tokens.push_back(static_cast<int>(fields[k]));
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace entlab
