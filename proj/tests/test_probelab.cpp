#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <set>

#include "entlab/error.hpp"
#include "entlab/probelab.hpp"
#include "entlab/rng.hpp"
#include "entlab/trainer.hpp"

using namespace entlab;

namespace {

ProbeDataset gaussian_rows(std::size_t n, bool separable, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double shift = separable ? (label ? 4.0 : -4.0) : 0.0;
    x.push_back({shift + 0.5 * standard_normal(rng), 0.5 * standard_normal(rng)});
    y.push_back(separable ? label : static_cast<int>(uniform_index(rng, 2)));
  }
  return make_probe_dataset(Site::residual(0), std::move(x), std::move(y), seed);
}

const TrainResult& trained_model() {
  static const TrainResult r = [] {
    CorpusConfig cc;
    cc.composition_p = 1.0;
    TrainConfig tc;
    tc.steps = 2500;
    tc.seed = 5;
    ModelConfig mc;
    mc.seed = 6;
    return train(build_dataset(cc), mc, tc);
  }();
  return r;
}

}  // namespace

TEST_CASE("4:1 split arithmetic") {
  const auto s = split_counts(8960);
  CHECK(s.train == 7168);
  CHECK(s.validation == 1792);
  std::vector<std::vector<double>> x(8960, std::vector<double>{0.0});
  std::vector<int> y(8960, 0);
  for (std::size_t i = 0; i < 8960; i += 7) y[i] = 1;
  const auto d = make_probe_dataset(Site::residual(0), x, y, 1);
  CHECK(d.train_idx.size() == 7168);
  CHECK(d.val_idx.size() == 1792);
  std::set<std::size_t> all(d.train_idx.begin(), d.train_idx.end());
  for (auto i : d.val_idx) CHECK(all.insert(i).second);  // disjoint
  CHECK(all.size() == 8960);
  int vpos = 0, tpos = 0;
  for (auto i : d.val_idx) vpos += y[i];
  for (auto i : d.train_idx) tpos += y[i];
  CHECK(vpos > 0);
  CHECK(tpos > 0);
}

TEST_CASE("split is seeded") {
  const auto a = gaussian_rows(100, true, 3), b = gaussian_rows(100, true, 3);
  CHECK(a.val_idx == b.val_idx);
}

TEST_CASE("probe datasets need both classes twice") {
  CHECK_THROWS_AS(make_probe_dataset(Site::residual(0), {{0.0}, {1.0}, {2.0}}, {1, 1, 1}, 0), Error);
  CHECK_THROWS_AS(make_probe_dataset(Site::residual(0), {{0.0}, {1.0}, {2.0}}, {0, 0, 1}, 0), Error);
  CHECK_NOTHROW(make_probe_dataset(Site::residual(0), {{0.0}, {1.0}, {2.0}, {3.0}}, {0, 0, 1, 1}, 0));
}

TEST_CASE("separable clusters reach accuracy 1") {
  const auto d = gaussian_rows(200, true, 11);
  const auto r = fit_probe(d);
  CHECK(r.val_accuracy == 1.0);
  CHECK(r.train_accuracy == 1.0);
}

TEST_CASE("labels independent of inputs stay near chance over 20 seeds") {
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) sum += fit_probe(gaussian_rows(400, false, 100 + s)).val_accuracy;
  const double mean_acc = sum / 20.0;
  MESSAGE("mean chance accuracy " << mean_acc);
  CHECK(std::abs(mean_acc - 0.5) <= 0.1);
}

TEST_CASE("swapping class labels negates the probe") {
  auto d = gaussian_rows(120, false, 7);
  for (std::size_t i = 0; i < d.x.size(); ++i) d.x[i][0] += d.y[i] ? 0.8 : -0.8;
  auto swapped = d;
  for (int& v : swapped.y) v = 1 - v;
  const auto a = fit_probe(d), b = fit_probe(swapped);
  for (std::size_t c = 0; c < a.w.size(); ++c) CHECK(b.w[c] == doctest::Approx(-a.w[c]).epsilon(1e-9));
  CHECK(b.b == doctest::Approx(-a.b).epsilon(1e-9).scale(1e-9));
  CHECK(a.val_accuracy == b.val_accuracy);
}

TEST_CASE("activation collection shapes and filters") {
  CorpusConfig cc;
  cc.composition_p = 0.05;
  const Dataset d = build_dataset(cc);
  const ModelState& m = trained_model().model;
  const auto rows = collect_activations(m, d, Site::residual(2), PositionRule::last_token());
  CHECK(rows.size() == 820);
  CHECK(rows.front().x.size() == 4);
  const auto heads = collect_activations(m, d, Site::attention_head(1, 0), PositionRule::last_token());
  CHECK(heads.front().x.size() == 2);
  const auto tok = collect_activations(m, d, Site::residual(0), PositionRule::token_equals(2));
  CHECK(tok.size() == 820);  // every sequence visits state 2 exactly once
  for (const auto& r : tok) CHECK(d.examples[r.example].tokens[r.position] == 2);
  CHECK_THROWS_AS(collect_activations(m, d, Site::residual(4), PositionRule::last_token()), Error);
  CHECK_THROWS_AS(collect_activations(m, d, Site::attention_head(0, 2), PositionRule::last_token()), Error);
}

TEST_CASE("feature directions: 12 unit vectors, deterministic, absent feature is an error") {
  CorpusConfig cc;
  cc.copies_per_feature = 20;
  const Dataset d = build_dataset(cc);
  const ModelState& m = trained_model().model;
  const ActivationCache cache(m, d);
  const auto a = feature_directions(cache, 9);
  const auto b = feature_directions(cache, 9);
  REQUIRE(a.directions.size() == 12);
  CHECK(a.layer.mean_accuracy.size() == 4);
  for (std::size_t i = 0; i < 12; ++i) {
    double n = 0;
    for (double v : a.directions[i].v) {
      CHECK(std::isfinite(v));
      n += v * v;
    }
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    CHECK(a.directions[i].v == b.directions[i].v);
    CHECK(a.directions[i].v.size() == 4);
  }
  cc.composition_p = 0.0;
  const Dataset z = build_dataset(cc);
  const ActivationCache zc(m, z);
  try {
    feature_direction(zc, {0, 1}, 1, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotFound);
  }
  CHECK(feature_directions(zc, 9).directions.size() == 8);
}

TEST_CASE("head accuracy table shape and chance under random labels") {
  CorpusConfig cc;
  cc.copies_per_feature = 40;
  const Dataset d = build_dataset(cc);
  const ModelState& m = trained_model().model;
  const ActivationCache cache(m, d);
  const auto t = head_accuracy_table(cache, [](const Example& e) { return e.feature.chain_id == 0 ? 1 : 0; }, 1);
  CHECK(t.probes.size() == 8);
  for (double a : t.distribution()) CHECK((a >= 0.0 && a <= 1.0));
  // Labels keyed on the example's address: unrelated to its content.
  const auto* base = d.examples.data();
  const auto shuffled = head_accuracy_table(
      cache, [base](const Example& e) { return static_cast<int>(hash64(77, {std::uint64_t(&e - base)}) & 1); }, 2);
  double s = 0;
  for (double a : shuffled.distribution()) s += a;
  CHECK(std::abs(s / 8.0 - 0.5) <= 0.1);
}

TEST_CASE("right-tail mass counts heads strictly above the threshold") {
  HeadTable t;
  t.n_layers = 1;
  t.n_heads = 4;
  for (double a : {0.95, 0.9, 0.5, 0.91}) {
    HeadProbe p;
    p.result.val_accuracy = a;
    t.probes.push_back(p);
  }
  CHECK(t.right_tail_mass(0.9) == doctest::Approx(0.5));
}

TEST_CASE("logit lens ranking and tie rule") {
  const ModelState& m = trained_model().model;
  for (int tok = 0; tok < 5; ++tok) {
    const auto row = m.unembedding_row(tok);
    std::vector<double> dir(row.begin(), row.end());
    double n = 0;
    for (double v : dir) n += v * v;
    for (double& v : dir) v /= std::sqrt(n);
    // Only meaningful when no other row has a larger projection; check that
    // the returned scores are sorted and `tok` is the argmax when its row is longest.
    const auto lens = logit_lens(dir, m, 5);
    for (std::size_t i = 1; i < lens.size(); ++i) CHECK(lens[i - 1].score >= lens[i].score);
    CHECK(lens.front().rank == 1);
  }
  const ModelState zero = ModelState::initialize(ModelConfig{});
  const std::vector<double> dir{1.0, 0.0, 0.0, 0.0};
  const auto lens = logit_lens(dir, zero, 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(lens[i].token == i);
    CHECK(lens[i].score == 0.0);
  }
  CHECK(logit_lens(dir, zero, 2).size() == 2);
  CHECK_THROWS_AS(logit_lens(std::vector<double>{1.0, 0.0}, zero, 2), Error);
}

TEST_CASE("logit lens puts a token first when the direction is its own unembedding row") {
  ModelState m = ModelState::initialize(ModelConfig{});
  auto un = m.view("unembed");
  // Pairwise non-parallel rows of equal length.
  const float rows[5][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}, {0.5f, 0.5f, 0.5f, 0.5f}};
  for (int t = 0; t < 5; ++t)
    for (int c = 0; c < 4; ++c) un[t * 4 + c] = rows[t][c];
  for (int t = 0; t < 5; ++t) {
    const std::vector<double> dir(rows[t], rows[t] + 4);
    CHECK(logit_lens(dir, m, 1).front().token == t);
  }
}
