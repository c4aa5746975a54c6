#include "entlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include "entlab/rng.hpp"

namespace entlab {

void TrainConfig::validate() const {
  require(steps >= 1, "train: steps must be >= 1");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), "train: lr must be positive");
  require(schedule == "constant" || schedule == "cosine", "train: schedule must be 'constant' or 'cosine'");
  require(eval_every >= 1, "train: eval_every must be >= 1");
  require(tau > 0.0, "train: tau must be > 0");
  require(divergence_factor > 1.0 && divergence_window >= 1, "train: invalid divergence guard");
}

bool PositionFilter::selects_chain(const CorpusConfig& cfg, int chain_id) const {
  switch (chains) {
    case ChainSelect::kAll:
      return true;
    case ChainSelect::kControl:
      return chain_id != cfg.target_chain;
    case ChainSelect::kTarget:
      return chain_id == cfg.target_chain;
  }
  return false;
}

namespace {

// Unique token sequences of a dataset with their multiplicities, in first-seen
// order of feature index.
std::map<int, std::pair<const Example*, double>> group_by_feature(const Dataset& data) {
  std::map<int, std::pair<const Example*, double>> groups;
  const int v = data.config.num_states;
  for (const auto& ex : data.examples) {
    auto [it, fresh] = groups.try_emplace(ex.feature.index(v), &ex, 0.0);
    it->second.second += 1.0;
  }
  return groups;
}

double scheduled_lr(const TrainConfig& cfg, int step) {
  if (cfg.schedule == "cosine")
    return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * static_cast<double>(step) / cfg.steps));
  return cfg.lr;
}

}  // namespace

double eval_ce(const ModelState& model, const Dataset& heldout, const PositionFilter& filter,
               std::span<const HeadShift> shifts) {
  if (heldout.empty()) fail(ErrorCode::kInvalidArgument, "eval_ce: empty held-out set");
  ShiftedMean acc;
  for (const auto& [fid, group] : group_by_feature(heldout)) {
    const auto& [ex, mult] = group;
    if (!filter.selects_chain(heldout.config, ex->feature.chain_id)) continue;
    const auto res = forward(model, ex->tokens, false, shifts);
    for (int k = 0; k + 1 < res.length; ++k) {
      if (!filter.selects_position(k)) continue;
      const auto z = res.logits_at(k);
      double mx = -INFINITY;
      for (double x : z) mx = std::max(mx, x);
      double sum = 0.0;
      for (double x : z) sum += std::exp(x - mx);
      acc.add(mx + std::log(sum) - z[ex->tokens[k + 1]], mult);
    }
  }
  if (acc.weight == 0.0) fail(ErrorCode::kInvalidArgument, "eval_ce: position filter selects nothing");
  return acc.value();
}

double bayes_optimal_ce(const Dataset& mixture, const Dataset& eval, const PositionFilter& filter) {
  // Count every (prefix, next) pair in the mixture.
  std::map<std::vector<int>, std::map<int, double>> next_counts;
  for (const auto& ex : mixture.examples)
    for (std::size_t k = 0; k + 1 < ex.tokens.size(); ++k) {
      std::vector<int> prefix(ex.tokens.begin(), ex.tokens.begin() + static_cast<long>(k) + 1);
      next_counts[prefix][ex.tokens[k + 1]] += 1.0;
    }
  double total = 0.0, count = 0.0;
  for (const auto& ex : eval.examples) {
    if (!filter.selects_chain(eval.config, ex.feature.chain_id)) continue;
    for (std::size_t k = 0; k + 1 < ex.tokens.size(); ++k) {
      if (!filter.selects_position(static_cast<int>(k))) continue;
      std::vector<int> prefix(ex.tokens.begin(), ex.tokens.begin() + static_cast<long>(k) + 1);
      auto it = next_counts.find(prefix);
      double p = 0.0;
      if (it != next_counts.end()) {
        double all = 0.0;
        for (const auto& [tok, c] : it->second) all += c;
        auto jt = it->second.find(ex.tokens[k + 1]);
        if (jt != it->second.end()) p = jt->second / all;
      }
      total += (p > 0.0) ? -std::log(p) : INFINITY;
      count += 1.0;
    }
  }
  if (count == 0.0) fail(ErrorCode::kInvalidArgument, "bayes_optimal_ce: position filter selects nothing");
  return total / count;
}

Dataset heldout_for(const Dataset& corpus, std::uint64_t train_seed) {
  return resample_like(corpus, hash64(train_seed, {0x68656c64ULL}));
}

TrainResult train(const Dataset& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  if (corpus.empty()) fail(ErrorCode::kInvalidArgument, "train: empty dataset");
  cfg.validate();
  model_cfg.validate();
  const int body = corpus.config.body_length() + 1;
  require(model_cfg.vocab_size >= corpus.config.vocab_size(), "train: model vocabulary smaller than corpus vocabulary");
  require(model_cfg.max_seq_len >= body, "train: max_seq_len shorter than the corpus sequences");

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  out.model = ModelState::initialize(model_cfg);
  auto& rec = out.record;
  rec.corpus = corpus.config;
  rec.model = model_cfg;
  rec.train = cfg;

  AdamOptimizer adam(out.model.num_params());
  const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};
  Rng rng(hash64(cfg.seed, {0x747261696eULL}));
  const int v = corpus.config.num_states;
  const auto n = static_cast<std::uint64_t>(corpus.size());

  std::map<int, double> counts;
  std::vector<WeightedSequence> batch;
  int above = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    counts.clear();
    std::map<int, const Example*> rep;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ex = corpus.examples[uniform_index(rng, n)];
      const int id = ex.feature.index(v);
      counts[id] += 1.0;
      rep.emplace(id, &ex);
    }
    batch.clear();
    for (const auto& [id, c] : counts) batch.push_back({rep[id]->tokens, c});

    Gradients g;
    try {
      g = backward(out.model, batch);
    } catch (const Error& e) {
      rec.diverged = true;
      rec.diagnostic = "step " + std::to_string(step) + ": " + e.what();
      throw TrainingDiverged(rec.diagnostic, rec);
    }
    if (step == 0) rec.initial_loss = g.loss;
    if (step % cfg.eval_every == 0) rec.loss_curve.push_back({step, g.loss});
    rec.final_train_loss = g.loss;

    above = (g.loss > cfg.divergence_factor * rec.initial_loss) ? above + 1 : 0;
    if (above >= cfg.divergence_window) {
      rec.diverged = true;
      rec.diagnostic = "loss above " + std::to_string(cfg.divergence_factor) + "x initial for " +
                       std::to_string(cfg.divergence_window) + " consecutive steps (step " + std::to_string(step) +
                       ", loss " + std::to_string(g.loss) + ")";
      throw TrainingDiverged(rec.diagnostic, rec);
    }
    try {
      adam.step(out.model, g.values, adam_cfg, scheduled_lr(cfg, step));
    } catch (const Error& e) {
      rec.diverged = true;
      rec.diagnostic = "step " + std::to_string(step) + ": " + e.what();
      throw TrainingDiverged(rec.diagnostic, rec);
    }
  }

  const Dataset heldout = heldout_for(corpus, cfg.seed);
  rec.heldout_ce = eval_ce(out.model, heldout, {});
  rec.bayes_heldout_ce = bayes_optimal_ce(heldout, heldout, {});
  const PositionFilter gate{2, -1, ChainSelect::kControl};
  rec.control_ce = eval_ce(out.model, heldout, gate);
  rec.bayes_control_ce = bayes_optimal_ce(heldout, heldout, gate);
  rec.converged = rec.control_ce <= rec.bayes_control_ce + cfg.tau;
  rec.loss_curve.push_back({cfg.steps, batch_loss(out.model, batch)});
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace entlab
