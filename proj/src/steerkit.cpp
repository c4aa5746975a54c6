#include "entlab/steerkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entlab/error.hpp"
#include "entlab/rng.hpp"
#include "entlab/trainer.hpp"

namespace entlab {

std::vector<HeadShift> SteeringPlan::shifts() const {
  std::vector<HeadShift> out;
  for (const auto& e : entries) {
    const double mag = sign * alpha * e.sigma;
    if (mag == 0.0) continue;
    HeadShift s{e.layer, e.head, {}};
    for (double c : e.direction) s.delta.push_back(mag * c);
    out.push_back(std::move(s));
  }
  return out;
}

double projection_sigma(std::span<const std::vector<double>> rows, std::span<const double> direction) {
  if (rows.empty()) return 0.0;
  std::vector<double> proj;
  proj.reserve(rows.size());
  for (const auto& r : rows) {
    double s = 0.0;
    for (std::size_t c = 0; c < direction.size(); ++c) s += r[c] * direction[c];
    proj.push_back(s);
  }
  const double m = std::accumulate(proj.begin(), proj.end(), 0.0) / static_cast<double>(proj.size());
  double v = 0.0;
  for (double p : proj) v += (p - m) * (p - m);
  return std::sqrt(v / static_cast<double>(proj.size()));
}

SteeringPlan build_plan(const HeadTable& table, int k, double alpha, int sign) {
  require(k >= 0 && static_cast<std::size_t>(k) <= table.probes.size(), "build_plan: K exceeds the number of heads");
  require(alpha >= 0.0, "build_plan: alpha must be >= 0");
  require(sign == 1 || sign == -1, "build_plan: sign must be +1 or -1");
  std::vector<std::size_t> order(table.probes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return table.probes[a].result.val_accuracy > table.probes[b].result.val_accuracy;
  });
  SteeringPlan plan;
  plan.alpha = alpha;
  plan.sign = sign;
  for (int i = 0; i < k; ++i) {
    const auto& hp = table.probes[order[i]];
    SteerEntry e;
    e.layer = hp.layer;
    e.head = hp.head;
    e.accuracy = hp.result.val_accuracy;
    double norm = 0.0;
    for (double w : hp.result.w) norm += w * w;
    norm = std::sqrt(norm);
    e.direction.assign(hp.result.w.size(), 0.0);
    if (norm > 0.0)
      for (std::size_t c = 0; c < e.direction.size(); ++c) e.direction[c] = hp.result.w[c] / norm;
    std::vector<std::vector<double>> train_rows;
    for (auto idx : hp.data.train_idx) train_rows.push_back(hp.data.x[idx]);
    e.sigma = projection_sigma(train_rows, e.direction);
    plan.entries.push_back(std::move(e));
  }
  return plan;
}

std::vector<int> steered_generate(const ModelState& model, const SteeringPlan& plan, std::span<const int> prompt,
                                  int steps, double temperature, std::uint64_t seed) {
  require(!prompt.empty(), "steered_generate: empty prompt");
  require(steps >= 1, "steered_generate: steps must be >= 1");
  require(temperature >= 0.0, "steered_generate: temperature must be >= 0");
  const auto shifts = plan.shifts();
  Rng rng(seed);
  std::vector<int> seq(prompt.begin(), prompt.end());
  for (int s = 0; s < steps; ++s) {
    const auto res = forward(model, seq, false, shifts);
    const auto z = res.logits_at(res.length - 1);
    int next = 0;
    if (temperature == 0.0) {
      next = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    } else {
      const double mx = *std::max_element(z.begin(), z.end());
      std::vector<double> p(z.size());
      double sum = 0.0;
      for (std::size_t v = 0; v < z.size(); ++v) sum += (p[v] = std::exp((z[v] - mx) / temperature));
      double u = uniform01(rng) * sum;
      next = static_cast<int>(z.size()) - 1;
      for (std::size_t v = 0; v < z.size(); ++v) {
        if (u < p[v]) {
          next = static_cast<int>(v);
          break;
        }
        u -= p[v];
      }
    }
    seq.push_back(next);
  }
  return seq;
}

std::optional<int> classify_continuation(std::span<const int> tokens, std::span<const ChainSpec> chains,
                                         double min_match) {
  if (tokens.size() < 2 || chains.empty()) return std::nullopt;
  const std::size_t n = tokens.size() - 1;
  std::optional<int> best;
  double best_frac = -1.0;
  bool tie = false;
  for (const auto& chain : chains) {
    const auto succ = chain.successors();
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const int a = tokens[k], b = tokens[k + 1];
      if (a >= 0 && a < static_cast<int>(succ.size()) && succ[a] == b) ++hits;
    }
    const double frac = static_cast<double>(hits) / static_cast<double>(n);
    if (frac < min_match) continue;
    if (frac > best_frac) {
      best_frac = frac;
      best = chain.chain_id;
      tie = false;
    } else if (frac == best_frac) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

GenerationEval eval_steering(const ModelState& model, const SteeringPlan& plan, const Dataset& heldout,
                             const SteerEvalConfig& cfg) {
  require(cfg.n_samples >= 1, "eval_steering: n_samples must be >= 1");
  const auto& cc = heldout.config;
  GenerationEval out;
  out.n_samples = cfg.n_samples;
  out.temperature = cfg.temperature;
  const std::vector<int> prompt{cc.bos_token()};
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const auto seq = steered_generate(model, plan, prompt, cc.body_length(), cfg.temperature,
                                      hash64(cfg.seed, {static_cast<std::uint64_t>(i)}));
    const std::span<const int> body(seq.begin() + 1, seq.end());
    if (classify_continuation(body, heldout.chains, cfg.min_match) == cc.target_chain) ++out.target_count;
    if (classify_continuation(body, heldout.chains, cfg.min_match_loose) == cc.target_chain) ++out.target_count_loose;
  }
  out.target_rate = static_cast<double>(out.target_count) / static_cast<double>(cfg.n_samples);
  out.target_rate_loose = static_cast<double>(out.target_count_loose) / static_cast<double>(cfg.n_samples);
  const auto shifts = plan.shifts();
  out.heldout_ce = eval_ce(model, heldout, {0, -1, ChainSelect::kControl}, shifts);
  return out;
}

}  // namespace entlab
