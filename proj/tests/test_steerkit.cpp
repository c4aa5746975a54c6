#include "doctest.h"

#include <cmath>

#include "entlab/error.hpp"
#include "entlab/rng.hpp"
#include "entlab/steerkit.hpp"
#include "entlab/trainer.hpp"

using namespace entlab;

namespace {

struct Fixture {
  Dataset data;
  TrainResult trained;
  Dataset labeled;
  HeadTable table;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    CorpusConfig cc;
    cc.composition_p = 0.5;
    x.data = build_dataset(cc);
    TrainConfig tc;
    tc.steps = 3000;
    tc.seed = 1;
    ModelConfig mc;
    mc.seed = 2;
    x.trained = train(x.data, mc, tc);
    x.labeled = materialize_features(x.data, 10, true, 3);
    const ActivationCache cache(x.trained.model, x.labeled);
    x.table = head_accuracy_table(cache, [](const Example& e) { return e.feature.chain_id == 0 ? 1 : 0; }, 4);
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("strength constants") {
  CHECK(kSteerWeak == 4.0);
  CHECK(kSteerMedium == 8.0);
  CHECK(kSteerStrong == 12.0);
}

TEST_CASE("sigma of projections {-1, 1} is 1") {
  const std::vector<std::vector<double>> rows{{-1, 5}, {1, 5}, {-1, -2}, {1, 0}};
  const std::vector<double> dir{1, 0};
  CHECK(projection_sigma(rows, dir) == 1.0);
}

TEST_CASE("plans: ordering, size and validation") {
  const auto& f = fixture();
  const auto plan = build_plan(f.table, 4, kSteerWeak, -1);
  REQUIRE(plan.k() == 4);
  for (std::size_t i = 1; i < plan.entries.size(); ++i)
    CHECK(plan.entries[i - 1].accuracy >= plan.entries[i].accuracy);
  for (const auto& e : plan.entries) {
    double n = 0;
    for (double v : e.direction) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
    CHECK(e.sigma >= 0.0);
  }
  CHECK(build_plan(f.table, 0, 4.0, -1).k() == 0);
  CHECK(build_plan(f.table, 0, 4.0, -1).shifts().empty());
  CHECK_THROWS_AS(build_plan(f.table, 9, 4.0, -1), Error);
  CHECK_THROWS_AS(build_plan(f.table, 2, -1.0, -1), Error);
  CHECK_THROWS_AS(build_plan(f.table, 2, 4.0, 0), Error);
}

TEST_CASE("alpha = 0 and K = 0 are exact identities on generation") {
  const auto& f = fixture();
  const std::vector<int> prompt{4};
  const SteeringPlan none;
  const auto zero_alpha = build_plan(f.table, 4, 0.0, -1);
  const auto zero_k = build_plan(f.table, 0, 8.0, -1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto base = steered_generate(f.trained.model, none, prompt, 4, 1.0, seed);
    CHECK(steered_generate(f.trained.model, zero_alpha, prompt, 4, 1.0, seed) == base);
    CHECK(steered_generate(f.trained.model, zero_k, prompt, 4, 1.0, seed) == base);
  }
}

TEST_CASE("per-head perturbation equals alpha * sigma along the direction") {
  const auto& f = fixture();
  SteeringPlan plan;
  plan.alpha = kSteerWeak;
  plan.sign = 1;
  plan.entries.push_back({1, 0, 0.9, {1.0, 0.0}, 1.0});
  const std::vector<int> toks{4, 1, 2, 3, 0};
  const auto base = forward(f.trained.model, toks, true);
  const auto sh = plan.shifts();
  const auto moved = forward(f.trained.model, toks, true, sh);
  for (int t = 0; t < 5; ++t) {
    CHECK(std::abs(moved.activations.head_at(1, 0, t)[0] - base.activations.head_at(1, 0, t)[0] - 4.0) < 1e-12);
    CHECK(moved.activations.head_at(1, 0, t)[1] == base.activations.head_at(1, 0, t)[1]);
  }
  // A real plan: each head's shift has norm alpha * sigma.
  const auto real = build_plan(f.table, 4, kSteerMedium, -1);
  const auto rs = real.shifts();
  const auto steered = forward(f.trained.model, toks, true, rs);
  for (const auto& e : real.entries) {
    if (e.sigma == 0.0) continue;
    // Shift only this head to isolate it from upstream effects.
    const std::vector<HeadShift> one{{e.layer, e.head, {}}};
    std::vector<HeadShift> single = one;
    for (double c : e.direction) single[0].delta.push_back(-kSteerMedium * e.sigma * c);
    const auto iso = forward(f.trained.model, toks, true, single);
    for (int t = 0; t < 5; ++t) {
      double n = 0;
      for (int c = 0; c < 2; ++c) {
        const double d = iso.activations.head_at(e.layer, e.head, t)[c] - base.activations.head_at(e.layer, e.head, t)[c];
        n += d * d;
      }
      CHECK(std::abs(std::sqrt(n) - kSteerMedium * e.sigma) < 1e-5);
    }
  }
  CHECK(steered.length == 5);
}

TEST_CASE("greedy decoding ignores the seed") {
  const auto& f = fixture();
  const auto plan = build_plan(f.table, 2, 4.0, -1);
  const std::vector<int> prompt{4};
  const auto a = steered_generate(f.trained.model, plan, prompt, 4, 0.0, 1);
  for (std::uint64_t s = 2; s < 10; ++s) CHECK(steered_generate(f.trained.model, plan, prompt, 4, 0.0, s) == a);
  CHECK(a.size() == 5);
  CHECK(a.front() == 4);
}

TEST_CASE("classification examples") {
  const std::vector<ChainSpec> canon{{0, {0, 1, 2, 3}}};
  CHECK(classify_continuation(std::vector<int>{2, 3, 0, 1}, canon) == 0);
  CHECK_FALSE(classify_continuation(std::vector<int>{0, 0, 0}, canon).has_value());
  CHECK_FALSE(classify_continuation(std::vector<int>{1}, canon).has_value());
  // Two chains sharing the only observed transition: a tie.
  const std::vector<ChainSpec> two{{0, {0, 1, 2, 3}}, {1, {0, 1, 3, 2}}};
  CHECK_FALSE(classify_continuation(std::vector<int>{0, 1}, two).has_value());
  CHECK(classify_continuation(std::vector<int>{0, 1, 2}, two) == 0);
  CHECK(classify_continuation(std::vector<int>{0, 1, 3}, two) == 1);
}

TEST_CASE("classification agrees with brute-force transition counting") {
  // Length-5 sequences over 4 states: with k matching transitions out of 4,
  // there are 4 * C(4,k) * 3^(4-k) sequences, so 4 + 48 = 52 reach 0.75.
  const std::vector<ChainSpec> canon{{0, {0, 1, 2, 3}}};
  int hits = 0, exact = 0;
  for (int code = 0; code < 1024; ++code) {
    std::vector<int> s(5);
    for (int i = 0, c = code; i < 5; ++i, c /= 4) s[i] = c % 4;
    int match = 0;
    for (int i = 0; i < 4; ++i) match += (s[i] + 1) % 4 == s[i + 1];
    const auto r = classify_continuation(s, canon, 0.75);
    CHECK(r.has_value() == (match >= 3));
    hits += r.has_value();
    exact += classify_continuation(s, canon, 1.0).has_value();
  }
  CHECK(hits == 52);
  CHECK(exact == 4);
}

TEST_CASE("steering evaluation: absent target stays absent, suppression lowers the rate") {
  const auto& f = fixture();
  const Dataset held = heldout_for(f.data, 1);
  SteerEvalConfig sc;
  sc.n_samples = 400;
  sc.seed = 9;
  const auto base = eval_steering(f.trained.model, SteeringPlan{}, held, sc);
  const auto sup = eval_steering(f.trained.model, build_plan(f.table, 4, kSteerWeak, -1), held, sc);
  MESSAGE("rates: base " << base.target_rate << " suppress " << sup.target_rate);
  CHECK(base.target_rate > 0.0);
  CHECK(sup.target_rate < base.target_rate);
  CHECK(base.target_count == static_cast<std::size_t>(std::llround(base.target_rate * 400)));
  CHECK(base.heldout_ce == doctest::Approx(eval_ce(f.trained.model, held, {0, -1, ChainSelect::kControl})));

  CorpusConfig cc;
  cc.composition_p = 0.0;
  const Dataset d0 = build_dataset(cc);
  TrainConfig tc;
  tc.steps = 2000;
  const auto m0 = train(d0, ModelConfig{}, tc);
  const auto r0 = eval_steering(m0.model, SteeringPlan{}, heldout_for(d0, 0), sc);
  CHECK(r0.target_rate <= 0.01);
}
