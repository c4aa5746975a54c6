#include "entlab/probelab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "entlab/error.hpp"
#include "entlab/io.hpp"
#include "entlab/rng.hpp"

namespace entlab {

std::string Site::describe() const {
  if (kind == Kind::kResidual) return "residual:L" + std::to_string(layer);
  return "head:L" + std::to_string(layer) + "H" + std::to_string(head);
}

ActivationCache::ActivationCache(const ModelState& model, const Dataset& data) : model_(&model), data_(&data) {
  by_example_.reserve(data.size());
  for (const auto& ex : data.examples) {
    auto it = records_.find(ex.tokens);
    if (it == records_.end()) it = records_.emplace(ex.tokens, forward(model, ex.tokens, true).activations).first;
    by_example_.push_back(&it->second);
  }
}

const ActivationRecord& ActivationCache::record_for(std::size_t example) const {
  if (example >= by_example_.size()) fail(ErrorCode::kOutOfRange, "activation cache: example index out of range");
  return *by_example_[example];
}

void check_site(const ModelConfig& cfg, const Site& site) {
  if (site.layer < 0 || site.layer >= cfg.n_layers) fail(ErrorCode::kOutOfRange, "site layer out of range");
  if (site.kind == Site::Kind::kHead && (site.head < 0 || site.head >= cfg.n_heads))
    fail(ErrorCode::kOutOfRange, "site head out of range");
}

std::vector<ActivationRow> collect_activations(const ActivationCache& cache, const Site& site,
                                               const PositionRule& rule) {
  check_site(cache.model().config(), site);
  std::vector<ActivationRow> rows;
  const auto& data = cache.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data.examples[i];
    const auto& rec = cache.record_for(i);
    const int T = static_cast<int>(ex.tokens.size());
    auto take = [&](int k) {
      const auto x = site.kind == Site::Kind::kResidual ? rec.residual_at(site.layer, k)
                                                        : rec.head_at(site.layer, site.head, k);
      rows.push_back({std::vector<double>(x.begin(), x.end()), i, k, ex.tokens[k], ex.feature});
    };
    switch (rule.kind) {
      case PositionRule::Kind::kLastToken:
        take(T - 1);
        break;
      case PositionRule::Kind::kAllPositions:
        for (int k = std::max(0, rule.min_position); k < T; ++k) take(k);
        break;
      case PositionRule::Kind::kTokenEquals:
        for (int k = 0; k < T; ++k)
          if (ex.tokens[k] == rule.value) take(k);
        break;
      case PositionRule::Kind::kAtPosition:
        if (rule.value < 0) fail(ErrorCode::kOutOfRange, "position rule: negative position");
        if (rule.value < T) take(rule.value);
        break;
    }
  }
  return rows;
}

std::vector<ActivationRow> collect_activations(const ModelState& model, const Dataset& data, const Site& site,
                                               const PositionRule& rule) {
  check_site(model.config(), site);
  const ActivationCache cache(model, data);
  return collect_activations(cache, site, rule);
}

SplitCounts split_counts(std::size_t n, double train_fraction) {
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  return {train, n - train};
}

ProbeDataset make_probe_dataset(const Site& site, std::vector<std::vector<double>> x, std::vector<int> y,
                                std::uint64_t seed, double train_fraction) {
  require(x.size() == y.size(), "probe dataset: row/label count mismatch");
  require(train_fraction > 0.0 && train_fraction < 1.0, "probe dataset: train fraction must lie in (0,1)");
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(y[i] == 0 || y[i] == 1, "probe dataset: labels must be 0 or 1");
    cls[y[i]].push_back(i);
  }
  if (cls[0].size() < 2 || cls[1].size() < 2)
    fail(ErrorCode::kInvalidArgument, "probe dataset: need at least 2 rows of each class (got " +
                                          std::to_string(cls[0].size()) + " and " + std::to_string(cls[1].size()) +
                                          ")");
  const auto total = split_counts(y.size(), train_fraction);
  // Allocate validation rows to classes proportionally, then keep both classes
  // present on both sides.
  std::size_t val1 = static_cast<std::size_t>(
      std::llround(static_cast<double>(total.validation) * cls[1].size() / static_cast<double>(y.size())));
  val1 = std::clamp<std::size_t>(val1, 1, cls[1].size() - 1);
  std::size_t val0 = total.validation >= val1 ? total.validation - val1 : 0;
  val0 = std::clamp<std::size_t>(val0, 1, cls[0].size() - 1);
  val1 = std::clamp<std::size_t>(total.validation >= val0 ? total.validation - val0 : 1, 1, cls[1].size() - 1);

  ProbeDataset d;
  d.site = site;
  d.train_fraction = train_fraction;
  Rng rng(seed);
  const std::size_t nval[2] = {val0, val1};
  for (int c = 0; c < 2; ++c) {
    shuffle(cls[c].begin(), cls[c].end(), rng);
    d.val_idx.insert(d.val_idx.end(), cls[c].begin(), cls[c].begin() + static_cast<long>(nval[c]));
    d.train_idx.insert(d.train_idx.end(), cls[c].begin() + static_cast<long>(nval[c]), cls[c].end());
  }
  std::sort(d.train_idx.begin(), d.train_idx.end());
  std::sort(d.val_idx.begin(), d.val_idx.end());
  d.x = std::move(x);
  d.y = std::move(y);
  return d;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double accuracy(const ProbeDataset& d, const std::vector<std::size_t>& idx, const std::vector<double>& w, double b) {
  if (idx.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto i : idx) {
    double z = b;
    for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * d.x[i][c];
    hit += ((z > 0.0 ? 1 : 0) == d.y[i]);
  }
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

}  // namespace

ProbeResult fit_probe(const ProbeDataset& data, const ProbeConfig& cfg) {
  require(cfg.iterations >= 1 && cfg.l2 >= 0.0, "fit_probe: invalid config");
  std::size_t n1 = 0;
  for (auto i : data.train_idx) n1 += data.y[i];
  if (n1 == 0 || n1 == data.train_idx.size())
    fail(ErrorCode::kInvalidArgument, "fit_probe: training split has a single class");
  const std::size_t dim = data.dim();

  // Identical training rows collapse into one weighted row; duplicates are the
  // norm for a deterministic model over a finite feature set.
  std::map<std::pair<std::vector<double>, int>, double> unique;
  for (auto i : data.train_idx) unique[{data.x[i], data.y[i]}] += 1.0;
  std::vector<const std::vector<double>*> ux;
  std::vector<double> uy, uw;
  for (const auto& [key, weight] : unique) {
    ux.push_back(&key.first);
    uy.push_back(key.second);
    uw.push_back(weight);
  }
  const double n = static_cast<double>(data.train_idx.size());

  // Step size from the Hessian bound 0.25 * max ||[x,1]||^2 + l2.
  double max_sq = 0.0;
  for (const auto* x : ux) {
    double sq = 1.0;
    for (double v : *x) sq += v * v;
    max_sq = std::max(max_sq, sq);
  }
  const double step = 1.0 / (0.25 * max_sq + cfg.l2);

  std::vector<double> w(dim, 0.0), gw(dim);
  double b = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t u = 0; u < ux.size(); ++u) {
      const auto& x = *ux[u];
      double z = b;
      for (std::size_t c = 0; c < dim; ++c) z += w[c] * x[c];
      const double r = uw[u] * (sigmoid(z) - uy[u]);
      for (std::size_t c = 0; c < dim; ++c) gw[c] += r * x[c];
      gb += r;
    }
    for (std::size_t c = 0; c < dim; ++c) w[c] -= step * (gw[c] / n + cfg.l2 * w[c]);
    b -= step * gb / n;
  }
  ProbeResult r;
  r.site = data.site;
  r.w = w;
  r.b = b;
  r.train_accuracy = accuracy(data, data.train_idx, w, b);
  r.val_accuracy = accuracy(data, data.val_idx, w, b);
  return r;
}

namespace {

struct TokenProbeOutcome {
  bool fitted = false;
  std::vector<double> unit_w;
  double accuracy = 0.0;
};

// Probe separating `feature` from all other features at current token `token`.
TokenProbeOutcome token_probe(const std::vector<ActivationRow>& rows, const FeatureId& feature, int layer, int token,
                              std::uint64_t seed, const ProbeConfig& cfg, int num_states) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& r : rows) {
    if (r.token != token) continue;
    x.push_back(r.x);
    y.push_back(r.feature == feature ? 1 : 0);
  }
  TokenProbeOutcome out;
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos < 2 || static_cast<std::size_t>(pos) + 2 > y.size()) return out;
  const auto pd = make_probe_dataset(Site::residual(layer), std::move(x), std::move(y),
                                     hash64(seed, {static_cast<std::uint64_t>(feature.index(num_states)),
                                                   static_cast<std::uint64_t>(token)}));
  const auto res = fit_probe(pd, cfg);
  double norm = 0.0;
  for (double v : res.w) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) return out;
  out.fitted = true;
  out.accuracy = res.val_accuracy;
  for (double v : res.w) out.unit_w.push_back(v / norm);
  return out;
}

FeatureDirection direction_from_rows(const std::vector<ActivationRow>& rows, const FeatureId& feature, int layer,
                                     std::uint64_t seed, const ProbeConfig& cfg, int num_states) {
  std::vector<int> tokens;
  for (const auto& r : rows)
    if (r.feature == feature) tokens.push_back(r.token);
  if (tokens.empty()) fail(ErrorCode::kNotFound, "feature_direction: feature absent from dataset");
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());

  FeatureDirection fd;
  fd.feature = feature;
  fd.layer = layer;
  std::vector<double> sum;
  double acc = 0.0;
  for (int t : tokens) {
    const auto o = token_probe(rows, feature, layer, t, seed, cfg, num_states);
    if (!o.fitted) {
      fd.tokens_skipped.push_back(t);
      continue;
    }
    if (sum.empty()) sum.assign(o.unit_w.size(), 0.0);
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += o.unit_w[c];
    acc += o.accuracy;
    fd.tokens_used.push_back(t);
  }
  if (fd.tokens_used.empty())
    fail(ErrorCode::kNotFound, "feature_direction: no token-conditioned probe could be fitted");
  double norm = 0.0;
  for (double v : sum) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) fail(ErrorCode::kNumerical, "feature_direction: averaged direction vanished");
  for (double& v : sum) v /= norm;
  fd.v = std::move(sum);
  fd.mean_accuracy = acc / static_cast<double>(fd.tokens_used.size());
  return fd;
}

std::vector<FeatureId> present_features(const Dataset& data) {
  std::vector<FeatureId> out;
  for (const auto& ex : data.examples) out.push_back(ex.feature);
  std::sort(out.begin(), out.end(), [&](const FeatureId& a, const FeatureId& b) {
    return a.index(data.config.num_states) < b.index(data.config.num_states);
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

FeatureDirection feature_direction(const ActivationCache& cache, const FeatureId& feature, int layer,
                                   std::uint64_t seed, const ProbeConfig& cfg) {
  const auto rows = collect_activations(cache, Site::residual(layer), PositionRule::all_positions(1));
  return direction_from_rows(rows, feature, layer, seed, cfg, cache.data().config.num_states);
}

namespace {

std::vector<FeatureDirection> directions_at(const ActivationCache& cache, int layer, std::uint64_t seed,
                                            const ProbeConfig& cfg) {
  const auto rows = collect_activations(cache, Site::residual(layer), PositionRule::all_positions(1));
  std::vector<FeatureDirection> out;
  for (const auto& f : present_features(cache.data()))
    out.push_back(direction_from_rows(rows, f, layer, seed, cfg, cache.data().config.num_states));
  return out;
}

double mean_accuracy(const std::vector<FeatureDirection>& dirs) {
  double s = 0.0;
  for (const auto& d : dirs) s += d.mean_accuracy;
  return dirs.empty() ? 0.0 : s / static_cast<double>(dirs.size());
}

}  // namespace

LayerChoice select_direction_layer(const ActivationCache& cache, std::uint64_t seed, const ProbeConfig& cfg) {
  return feature_directions(cache, seed, cfg).layer;
}

DirectionSet feature_directions(const ActivationCache& cache, std::uint64_t seed, const ProbeConfig& cfg) {
  DirectionSet best;
  double best_acc = -1.0;
  for (int l = 0; l < cache.model().config().n_layers; ++l) {
    auto dirs = directions_at(cache, l, seed, cfg);
    const double acc = mean_accuracy(dirs);
    best.layer.mean_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best.layer.layer = l;
      best.directions = std::move(dirs);
    }
  }
  return best;
}

std::vector<double> HeadTable::distribution() const {
  std::vector<double> out;
  for (const auto& p : probes) out.push_back(p.result.val_accuracy);
  return out;
}

double HeadTable::right_tail_mass(double threshold) const {
  if (probes.empty()) return 0.0;
  const auto d = distribution();
  return static_cast<double>(std::count_if(d.begin(), d.end(), [&](double a) { return a > threshold; })) /
         static_cast<double>(d.size());
}

namespace {

ProbeDataset labeled_rows(const ActivationCache& cache, const Site& site, const PositionRule& rule,
                          const Labeler& label, std::uint64_t seed) {
  const auto rows = collect_activations(cache, site, rule);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  x.reserve(rows.size());
  for (const auto& r : rows) {
    x.push_back(r.x);
    y.push_back(label(cache.data().examples[r.example]));
  }
  return make_probe_dataset(site, std::move(x), std::move(y), seed);
}

}  // namespace

HeadTable head_accuracy_table(const ActivationCache& cache, const Labeler& label, std::uint64_t seed,
                              const PositionRule& rule, const ProbeConfig& cfg) {
  const auto& mc = cache.model().config();
  HeadTable t;
  t.n_layers = mc.n_layers;
  t.n_heads = mc.n_heads;
  for (int l = 0; l < mc.n_layers; ++l)
    for (int h = 0; h < mc.n_heads; ++h) {
      HeadProbe hp;
      hp.layer = l;
      hp.head = h;
      hp.data = labeled_rows(cache, Site::attention_head(l, h), rule, label,
                             hash64(seed, {static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(h)}));
      hp.result = fit_probe(hp.data, cfg);
      t.probes.push_back(std::move(hp));
    }
  return t;
}

std::vector<ProbeResult> residual_probes(const ActivationCache& cache, const Labeler& label, std::uint64_t seed,
                                         const PositionRule& rule, const ProbeConfig& cfg) {
  std::vector<ProbeResult> out;
  for (int l = 0; l < cache.model().config().n_layers; ++l) {
    const auto d = labeled_rows(cache, Site::residual(l), rule, label, hash64(seed, {0x726573ULL, static_cast<std::uint64_t>(l)}));
    out.push_back(fit_probe(d, cfg));
  }
  return out;
}

std::vector<LensEntry> logit_lens(std::span<const double> direction, const ModelState& model, int k) {
  const auto& cfg = model.config();
  if (static_cast<int>(direction.size()) != cfg.d_model)
    fail(ErrorCode::kInvalidArgument, "logit_lens: direction dimension does not match d_model");
  require(k >= 0 && k <= cfg.vocab_size, "logit_lens: k must lie in [0, vocab]");
  std::vector<LensEntry> all;
  for (int t = 0; t < cfg.vocab_size; ++t) {
    const auto row = model.unembedding_row(t);
    double s = 0.0;
    for (int c = 0; c < cfg.d_model; ++c) s += static_cast<double>(row[c]) * direction[c];
    all.push_back({0, t, s});
  }
  std::stable_sort(all.begin(), all.end(), [](const LensEntry& a, const LensEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token < b.token;
  });
  all.resize(k);
  for (int r = 0; r < k; ++r) all[r].rank = r + 1;
  return all;
}

void write_head_acc_csv(const HeadTable& table, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "layer,head,accuracy\n";
  for (const auto& p : table.probes) os << p.layer << ',' << p.head << ',' << fmt6(p.result.val_accuracy) << '\n';
  write_text_file(path, os.str());
}

void write_directions_csv(const DirectionSet& dirs, int num_states, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "feature_id";
  const std::size_t dim = dirs.directions.empty() ? 0 : dirs.directions.front().v.size();
  for (std::size_t c = 0; c < dim; ++c) os << ",v" << c;
  os << '\n';
  for (const auto& d : dirs.directions) {
    os << d.feature.index(num_states);
    for (double v : d.v) os << ',' << fmt6(v);
    os << '\n';
  }
  write_text_file(path, os.str());
}

void write_logit_lens_csv(std::span<const LensEntry> entries, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "rank,token,score\n";
  for (const auto& e : entries) os << e.rank << ',' << e.token << ',' << fmt6(e.score) << '\n';
  write_text_file(path, os.str());
}

}  // namespace entlab
