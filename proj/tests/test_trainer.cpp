#include "doctest.h"

#include <cmath>
#include <map>

#include "entlab/io.hpp"
#include "entlab/trainer.hpp"

using namespace entlab;

namespace {

// Independent oracle: empirical next-token distribution per prefix.
double oracle_bayes(const Dataset& mix, const Dataset& eval, int min_pos, bool control_only) {
  std::map<std::vector<int>, std::map<int, double>> cnt;
  for (const auto& ex : mix.examples)
    for (std::size_t k = 0; k + 1 < ex.tokens.size(); ++k) {
      std::vector<int> pre(ex.tokens.begin(), ex.tokens.begin() + k + 1);
      cnt[pre][ex.tokens[k + 1]] += 1;
    }
  double tot = 0, n = 0;
  for (const auto& ex : eval.examples) {
    if (control_only && ex.feature.chain_id == eval.config.target_chain) continue;
    for (std::size_t k = static_cast<std::size_t>(min_pos); k + 1 < ex.tokens.size(); ++k) {
      std::vector<int> pre(ex.tokens.begin(), ex.tokens.begin() + k + 1);
      double all = 0;
      for (auto& [t, c] : cnt[pre]) all += c;
      tot += -std::log(cnt[pre][ex.tokens[k + 1]] / all);
      n += 1;
    }
  }
  return tot / n;
}

}  // namespace

TEST_CASE("eval_ce of a zero-init model is ln 5") {
  const Dataset d = build_dataset(CorpusConfig{});
  const ModelState m = ModelState::initialize(ModelConfig{});
  CHECK(std::abs(eval_ce(m, d, {}) - std::log(5.0)) < 1e-12);
  CHECK(std::abs(eval_ce(m, d, {2, -1, ChainSelect::kControl}) - std::log(5.0)) < 1e-12);
}

TEST_CASE("eval_ce rejects empty selections") {
  CorpusConfig cc;
  cc.composition_p = 0.0;
  const Dataset d = build_dataset(cc);
  const ModelState m = ModelState::initialize(ModelConfig{});
  CHECK_THROWS_AS(eval_ce(m, d, {0, -1, ChainSelect::kTarget}), Error);
  CHECK_THROWS_AS(eval_ce(m, d, {9, -1, ChainSelect::kAll}), Error);
  CHECK_THROWS_AS(eval_ce(m, Dataset{}, {}), Error);
}

TEST_CASE("Bayes-optimal CE matches the prefix-count oracle") {
  for (double p : {0.0, 0.05, 0.3, 1.0}) {
    CorpusConfig cc;
    cc.composition_p = p;
    cc.seed = 8;
    const Dataset d = build_dataset(cc);
    CHECK(bayes_optimal_ce(d, d, {}) == doctest::Approx(oracle_bayes(d, d, 0, false)).epsilon(1e-12));
    CHECK(bayes_optimal_ce(d, d, {2, -1, ChainSelect::kControl}) ==
          doctest::Approx(oracle_bayes(d, d, 2, true)).epsilon(1e-12));
  }
}

TEST_CASE("Bayes CE structure: BOS position costs ln 4, one chain costs nothing after that") {
  CorpusConfig cc;
  cc.num_chains = 2;
  cc.composition_p = 0.0;
  const Dataset d = build_dataset(cc);
  CHECK(bayes_optimal_ce(d, d, {0, 0}) == doctest::Approx(std::log(4.0)));
  CHECK(bayes_optimal_ce(d, d, {1, -1}) == doctest::Approx(0.0));
}

TEST_CASE("held-out set keeps the training recipe") {
  CorpusConfig cc;
  cc.composition_p = 0.2;
  const Dataset d = build_dataset(cc);
  const Dataset h = heldout_for(d, 7);
  CHECK(h.examples.size() == d.examples.size());
  for (int f = 0; f < 12; ++f) CHECK(h.count_feature({f / 4, f % 4}) == d.count_feature({f / 4, f % 4}));
  CHECK(serialize_examples(h) != serialize_examples(d));
}

TEST_CASE("short training run: initial loss, determinism, Bayes floor") {
  CorpusConfig cc;
  cc.composition_p = 0.5;
  const Dataset d = build_dataset(cc);
  TrainConfig tc;
  tc.steps = 400;
  tc.eval_every = 100;
  tc.seed = 3;
  ModelConfig mc;
  mc.seed = 4;
  const TrainResult a = train(d, mc, tc);
  const TrainResult b = train(d, mc, tc);
  CHECK(a.record.initial_loss == std::log(5.0));
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
  CHECK(a.record.loss_curve == b.record.loss_curve);
  CHECK(a.record.final_train_loss < a.record.initial_loss);
  CHECK(a.record.heldout_ce >= a.record.bayes_heldout_ce - 1e-6);
  for (const auto& pt : a.record.loss_curve) CHECK(std::isfinite(pt.loss));
  CHECK(a.model.all_finite());
}

TEST_CASE("RunRecord JSON round trip") {
  RunRecord r;
  r.corpus.composition_p = 0.02;
  r.model.seed = 123456789012345ull;
  r.train.schedule = "cosine";
  r.initial_loss = std::log(5.0);
  r.heldout_ce = 0.123456789012345;
  r.loss_curve = {{0, 1.6}, {500, 0.7}};
  r.checkpoint_path = "model.bin";
  r.converged = true;
  r.diagnostic = "x";
  const nlohmann::json j = r;
  CHECK(j.get<RunRecord>() == r);
  CHECK(nlohmann::json::parse(j.dump()).get<RunRecord>() == r);
}

TEST_CASE("train config validation and unknown keys") {
  TrainConfig tc;
  tc.steps = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  CHECK_THROWS_AS(nlohmann::json({{"stepz", 3}}).get<TrainConfig>(), Error);
}

TEST_CASE("a runaway learning rate trips the divergence guard") {
  CorpusConfig cc;
  const Dataset d = build_dataset(cc);
  TrainConfig tc;
  tc.steps = 3000;
  tc.lr = 50.0;
  tc.divergence_factor = 2.0;
  tc.divergence_window = 50;
  bool diverged = false;
  try {
    train(d, ModelConfig{}, tc);
  } catch (const TrainingDiverged& e) {
    diverged = true;
    CHECK(e.record().diverged);
    CHECK(e.code() == ErrorCode::kDiverged);
    CHECK_FALSE(e.record().diagnostic.empty());
  }
  CHECK(diverged);
}
