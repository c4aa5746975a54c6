#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "entlab/corpus.hpp"
#include "entlab/error.hpp"

using namespace entlab;

namespace {

// Brute force: every permutation of {0..V-1} whose orbit from 0 covers all states.
std::set<Cycle> all_single_cycles(int v) {
  std::vector<int> succ(v);
  for (int i = 0; i < v; ++i) succ[i] = i;
  std::set<Cycle> out;
  do {
    int s = 0, len = 0;
    Cycle c;
    do {
      c.push_back(s);
      s = succ[s];
      ++len;
    } while (s != 0 && len <= v);
    if (len == v && s == 0) out.insert(c);
  } while (std::next_permutation(succ.begin(), succ.end()));
  return out;
}

}  // namespace

TEST_CASE("single-cycle counts match brute-force enumeration") {
  for (int v = 2; v <= 6; ++v) CHECK(count_single_cycles(v) == all_single_cycles(v).size());
  CHECK(all_single_cycles(4).size() == 6);
}

TEST_CASE("generate_chain draws only single cycles and honours the forbidden set") {
  const auto all = all_single_cycles(4);
  std::set<Cycle> forbidden;
  for (int k = 0; k < 6; ++k) {
    const ChainSpec c = generate_chain(1234, 4, forbidden, k);
    c.validate();
    CHECK(all.count(c.cycle) == 1);
    CHECK(forbidden.count(c.cycle) == 0);
    forbidden.insert(c.cycle);
  }
  CHECK_THROWS_AS(generate_chain(1234, 4, forbidden, 6), Error);
  try {
    generate_chain(1234, 4, forbidden, 6);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kExhausted);
  }
}

TEST_CASE("V=2 has one cycle regardless of seed") {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) CHECK(generate_chain(seed, 2, {}, 0).cycle == Cycle{0, 1});
}

TEST_CASE("transition matrix is a 0/1 doubly stochastic single orbit") {
  const auto chains = build_chains(CorpusConfig{});
  for (const auto& c : chains) {
    const auto m = c.transition_matrix();
    const int v = c.num_states();
    for (int i = 0; i < v; ++i) {
      int row = 0, col = 0;
      for (int j = 0; j < v; ++j) {
        CHECK((m[i * v + j] == 0 || m[i * v + j] == 1));
        row += m[i * v + j];
        col += m[j * v + i];
      }
      CHECK(row == 1);
      CHECK(col == 1);
      CHECK(m[i * v + i] == 0);
    }
  }
}

TEST_CASE("sample_sequence rotations") {
  const ChainSpec canon{0, {0, 1, 2, 3}};
  CHECK(sample_sequence(canon, 2, 4) == std::vector<int>{2, 3, 0, 1});
  CHECK(sample_sequence(canon, 0, 1) == std::vector<int>{0});
  const ChainSpec odd{1, {0, 2, 1, 3}};
  for (int s = 0; s < 4; ++s) {
    const auto seq = sample_sequence(odd, s, 4);
    CHECK(odd.successors()[seq.back()] == s);  // last token precedes the start
  }
}

TEST_CASE("dataset sizes by composition") {
  CorpusConfig cfg;
  cfg.composition_p = 1.0;
  CHECK(build_dataset(cfg).examples.size() == 1200);
  cfg.composition_p = 0.05;
  const Dataset d = build_dataset(cfg);
  CHECK(d.examples.size() == 820);
  CHECK(d.count_feature({0, 0}) == 5);
  CHECK(d.count_feature({1, 3}) == 100);
  cfg.composition_p = 0.0;
  const Dataset z = build_dataset(cfg);
  CHECK(z.examples.size() == 800);
  CHECK_FALSE(z.contains_feature({0, 2}));
  CHECK(z.warnings.empty());
}

TEST_CASE("target copies round half to even, with a warning when they vanish") {
  CorpusConfig cfg;
  cfg.copies_per_feature = 10;
  cfg.composition_p = 0.25;  // 2.5 -> 2
  CHECK(cfg.target_copies() == 2);
  cfg.composition_p = 0.35;  // 3.5 -> 4
  CHECK(cfg.target_copies() == 4);
  cfg.composition_p = 0.01;  // 0.1 -> 0
  const Dataset d = build_dataset(cfg);
  CHECK(cfg.target_copies() == 0);
  CHECK(d.warnings.size() == 1);
  CHECK(d.examples.size() == 80);
}

TEST_CASE("every example follows its chain") {
  CorpusConfig cfg;
  cfg.composition_p = 0.2;
  cfg.seed = 17;
  const Dataset d = build_dataset(cfg);
  for (const auto& ex : d.examples) {
    REQUIRE(ex.tokens.size() == 5);
    CHECK(ex.tokens[0] == cfg.bos_token());
    CHECK(ex.tokens[1] == ex.feature.start_state);
    const auto succ = d.chains[ex.feature.chain_id].successors();
    for (std::size_t t = 1; t + 1 < ex.tokens.size(); ++t) CHECK(succ[ex.tokens[t]] == ex.tokens[t + 1]);
  }
}

TEST_CASE("chains are distinct and dataset regeneration is byte-identical") {
  CorpusConfig cfg;
  cfg.seed = 5;
  const Dataset a = build_dataset(cfg), b = build_dataset(cfg);
  CHECK(serialize_examples(a) == serialize_examples(b));
  std::set<Cycle> seen;
  for (const auto& c : a.chains) seen.insert(c.cycle);
  CHECK(seen.size() == 3);
  cfg.seed = 6;
  CHECK(serialize_examples(build_dataset(cfg)) != serialize_examples(a));
}

TEST_CASE("dataset save/load round trip") {
  CorpusConfig cfg;
  cfg.composition_p = 0.1;
  cfg.seed = 3;
  const Dataset a = build_dataset(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "entlab_test_corpus";
  std::filesystem::remove_all(dir);
  save_dataset(a, dir);
  const Dataset b = load_dataset(dir);
  CHECK(serialize_examples(a) == serialize_examples(b));
  CHECK(b.chains == a.chains);
  CHECK(b.config.composition_p == doctest::Approx(0.1));
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  CorpusConfig cfg;
  cfg.composition_p = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.num_chains = 7;  // only 6 four-cycles exist
  CHECK_THROWS_AS(build_dataset(cfg), Error);
  cfg = {};
  cfg.target_chain = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("materialize_features includes absent chains on request") {
  CorpusConfig cfg;
  cfg.composition_p = 0.0;
  const Dataset d = build_dataset(cfg);
  const Dataset all = materialize_features(d, 3, true, 1);
  CHECK(all.examples.size() == 36);
  CHECK(all.count_feature({0, 1}) == 3);
  const Dataset present = materialize_features(d, 3, false, 1);
  CHECK(present.examples.size() == 24);
}
