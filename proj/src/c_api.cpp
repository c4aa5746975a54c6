#include "entlab/entlab.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>

#include "json.hpp"

#include "entlab/corpus.hpp"
#include "entlab/error.hpp"
#include "entlab/geometry.hpp"
#include "entlab/io.hpp"
#include "entlab/nanoformer.hpp"
#include "entlab/probelab.hpp"
#include "entlab/rng.hpp"
#include "entlab/steerkit.hpp"
#include "entlab/sweeper.hpp"
#include "entlab/trainer.hpp"

struct entlab_dataset {
  entlab::Dataset data;
};

struct entlab_model {
  entlab::ModelState model;
};

namespace {

using nlohmann::json;
using namespace entlab;

thread_local std::string g_last_error;

entlab_status set_error(entlab_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
entlab_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return ENTLAB_OK;
  } catch (const Error& e) {
    return set_error(static_cast<entlab_status>(static_cast<int>(e.code())), e.what());
  } catch (const json::exception& e) {
    return set_error(ENTLAB_E_FORMAT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(ENTLAB_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(ENTLAB_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(ENTLAB_E_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void put(char** out, const json& j) {
  if (out) *out = dup_string(j.dump(2));
}

json parse_opt(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object()) fail(ErrorCode::kFormat, "options must be a JSON object");
  return j;
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

ProbeConfig probe_cfg(const json& o) {
  ProbeConfig c;
  get_opt(o, "l2", c.l2);
  get_opt(o, "iterations", c.iterations);
  require(c.l2 >= 0 && c.iterations >= 1, "probe needs l2 >= 0 and iterations >= 1");
  return c;
}

// Head probes on every feature of every chain, labeled by target membership.
struct HeadSetup {
  Dataset labeled;
  HeadTable table;
};

HeadSetup head_setup(const ModelState& m, const Dataset& ds, std::uint64_t seed, int copies, const PositionRule& rule,
                     const ProbeConfig& pc) {
  HeadSetup h;
  h.labeled = materialize_features(ds, copies, true, hash64(seed, {4}));
  const ActivationCache cache(m, h.labeled);
  const int target = ds.config.target_chain;
  h.table = head_accuracy_table(
      cache, [target](const Example& e) { return e.feature.chain_id == target ? 1 : 0; }, hash64(seed, {5}), rule,
      pc);
  return h;
}

PositionRule parse_rule(const json& o) {
  const std::string r = o.value("rule", std::string("last_token"));
  if (r == "last_token") return PositionRule::last_token();
  if (r == "all_positions") return PositionRule::all_positions(1);
  fail(ErrorCode::kInvalidArgument, "unknown position rule '" + r + "'");
}

json eval_json(const GenerationEval& g) {
  const Interval ci = binomial_ci(g.target_count, g.n_samples);
  return {{"n_samples", g.n_samples},     {"target_count", g.target_count},
          {"target_rate", g.target_rate}, {"target_rate_ci95", {ci.lower, ci.upper}},
          {"target_rate_loose", g.target_rate_loose},
          {"heldout_ce", g.heldout_ce},   {"temperature", g.temperature},
          {"prompt", g.prompt}};
}

json report_json_of(const SweepReport& r) {
  json curves = json::array();
  for (const auto& c : r.curves)
    curves.push_back({{"composition_p", c.composition_p},
                      {"n_cells", c.n_cells},
                      {"n_converged", c.n_converged},
                      {"target_e_mean", std::isfinite(c.target_e_mean) ? json(c.target_e_mean) : json(nullptr)},
                      {"target_e_std", std::isfinite(c.target_e_std) ? json(c.target_e_std) : json(nullptr)},
                      {"control_e_mean", c.control_e_mean},
                      {"control_e_std", c.control_e_std},
                      {"unsteered_rate_mean", c.unsteered_rate_mean},
                      {"steered_rate_mean", c.steered_rate_mean},
                      {"heldout_ce_mean", c.heldout_ce_mean}});
  json failed = json::array();
  for (const auto& c : r.cells)
    if (!c.ok) failed.push_back({{"composition_p", c.composition_p}, {"replicate", c.replicate}, {"diagnostic", c.diagnostic}});
  return {{"out_dir", r.config.out_dir}, {"cells", r.cells.size()}, {"cells_trained", r.cells_trained},
          {"failed", failed},           {"curves", curves},         {"files", r.files}};
}

}  // namespace

extern "C" {

const char* entlab_version(void) { return "0.1.0"; }

const char* entlab_last_error(void) { return g_last_error.c_str(); }

const char* entlab_status_name(entlab_status s) {
  switch (s) {
    case ENTLAB_OK: return "ok";
    case ENTLAB_E_INVALID_ARGUMENT: return "invalid_argument";
    case ENTLAB_E_OUT_OF_RANGE: return "out_of_range";
    case ENTLAB_E_EXHAUSTED: return "exhausted";
    case ENTLAB_E_NOT_FOUND: return "not_found";
    case ENTLAB_E_IO: return "io";
    case ENTLAB_E_FORMAT: return "format";
    case ENTLAB_E_NUMERICAL: return "numerical";
    case ENTLAB_E_DIVERGED: return "diverged";
    case ENTLAB_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void entlab_string_free(char* s) { std::free(s); }

entlab_status entlab_dataset_build(const char* corpus_json, entlab_dataset** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const CorpusConfig cfg = parse_opt(corpus_json).get<CorpusConfig>();
    *out = new entlab_dataset{build_dataset(cfg)};
  });
}

entlab_status entlab_dataset_load(const char* dir, entlab_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    *out = new entlab_dataset{load_dataset(dir)};
  });
}

entlab_status entlab_dataset_save(const entlab_dataset* ds, const char* dir) {
  return guarded([&] {
    need(ds, "dataset");
    need(dir, "dir");
    save_dataset(ds->data, dir);
  });
}

entlab_status entlab_dataset_size(const entlab_dataset* ds, size_t* n) {
  return guarded([&] {
    need(ds, "dataset");
    need(n, "n_examples");
    *n = ds->data.examples.size();
  });
}

entlab_status entlab_dataset_info(const entlab_dataset* ds, char** json_out) {
  return guarded([&] {
    need(ds, "dataset");
    need(json_out, "json_out");
    json chains = json::array();
    for (const auto& c : ds->data.chains) chains.push_back(c.cycle);
    put(json_out, {{"config", ds->data.config},
                   {"chains", chains},
                   {"warnings", ds->data.warnings},
                   {"num_examples", ds->data.examples.size()}});
  });
}

void entlab_dataset_free(entlab_dataset* ds) { delete ds; }

entlab_status entlab_model_load(const char* path, entlab_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new entlab_model{load_checkpoint(path)};
  });
}

entlab_status entlab_model_save(const entlab_model* m, const char* path) {
  return guarded([&] {
    need(m, "model");
    need(path, "path");
    save_checkpoint(m->model, path);
  });
}

entlab_status entlab_model_config(const entlab_model* m, char** json_out) {
  return guarded([&] {
    need(m, "model");
    need(json_out, "json_out");
    put(json_out, json(m->model.config()));
  });
}

entlab_status entlab_model_logits(const entlab_model* m, const int* tokens, size_t n_tokens, double* out,
                                  size_t out_len) {
  return guarded([&] {
    need(m, "model");
    need(tokens, "tokens");
    need(out, "out");
    const ForwardResult r = forward(m->model, std::span<const int>(tokens, n_tokens), false);
    if (out_len < r.logits.size())
      fail(ErrorCode::kOutOfRange, "output buffer holds " + std::to_string(out_len) + " doubles, need " +
                                       std::to_string(r.logits.size()));
    std::copy(r.logits.begin(), r.logits.end(), out);
  });
}

void entlab_model_free(entlab_model* m) { delete m; }

entlab_status entlab_train(const entlab_dataset* ds, const char* model_json, const char* train_json,
                           entlab_model** out, char** record_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = nullptr;
    if (record_json) *record_json = nullptr;
    ModelConfig mc = parse_opt(model_json).get<ModelConfig>();
    mc.vocab_size = ds->data.config.vocab_size();
    mc.max_seq_len = std::max(mc.max_seq_len, ds->data.config.body_length() + 1);
    const TrainConfig tc = parse_opt(train_json).get<TrainConfig>();
    try {
      TrainResult r = train(ds->data, mc, tc);
      put(record_json, json(r.record));
      *out = new entlab_model{std::move(r.model)};
    } catch (const TrainingDiverged& e) {
      put(record_json, json(e.record()));
      throw;
    }
  });
}

entlab_status entlab_probe(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                           const char* out_dir, char** result_json) {
  return guarded([&] {
    need(m, "model");
    need(ds, "dataset");
    const json o = parse_opt(options_json);
    check_keys(o, {"seed", "l2", "iterations", "head_probe_copies", "rule", "lens_k"}, "probe options");
    const std::uint64_t seed = o.value("seed", std::uint64_t{0});
    const int copies = o.value("head_probe_copies", 10);
    const int lens_k = o.value("lens_k", 3);
    require(copies >= 1 && lens_k >= 1, "head_probe_copies and lens_k must be >= 1");
    const ProbeConfig pc = probe_cfg(o);
    check_site(m->model.config(), Site::residual(0));

    const HeadSetup h = head_setup(m->model, ds->data, seed, copies, parse_rule(o), pc);
    const ActivationCache cache(m->model, ds->data);
    const DirectionSet dirs = feature_directions(cache, hash64(seed, {3}), pc);
    const int V = ds->data.config.num_states;

    json heads = json::array();
    for (const auto& p : h.table.probes)
      heads.push_back({{"layer", p.layer}, {"head", p.head}, {"val_accuracy", p.result.val_accuracy},
                       {"train_accuracy", p.result.train_accuracy}});
    json features = json::array();
    std::vector<LensEntry> all_lens;
    for (const auto& d : dirs.directions) {
      const auto lens = logit_lens(d.v, m->model, lens_k);
      json lj = json::array();
      for (const auto& e : lens) lj.push_back({{"rank", e.rank}, {"token", e.token}, {"score", e.score}});
      features.push_back({{"feature_id", d.feature.index(V)},
                          {"chain", d.feature.chain_id},
                          {"start_state", d.feature.start_state},
                          {"mean_accuracy", d.mean_accuracy},
                          {"tokens_used", d.tokens_used},
                          {"tokens_skipped", d.tokens_skipped},
                          {"direction", d.v},
                          {"logit_lens", lj}});
      all_lens.insert(all_lens.end(), lens.begin(), lens.end());
    }
    if (out_dir) {
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      write_head_acc_csv(h.table, dir / "head_acc.csv");
      write_directions_csv(dirs, V, dir / "directions.csv");
      std::string lens_csv = "feature_id,rank,token,score\n";
      for (const auto& d : dirs.directions)
        for (const auto& e : logit_lens(d.v, m->model, lens_k))
          lens_csv += std::to_string(d.feature.index(V)) + "," + std::to_string(e.rank) + "," +
                      std::to_string(e.token) + "," + fmt6(e.score) + "\n";
      write_text_file(dir / "logit_lens.csv", lens_csv);
    }
    put(result_json, {{"direction_layer", dirs.layer.layer},
                      {"layer_mean_accuracy", dirs.layer.mean_accuracy},
                      {"heads", heads},
                      {"right_tail_mass", h.table.right_tail_mass(0.9)},
                      {"features", features}});
  });
}

entlab_status entlab_welch_bound(int num_features, int dim, double* out) {
  return guarded([&] {
    need(out, "out");
    *out = welch_bound(num_features, dim);
  });
}

entlab_status entlab_entanglement(const double* vectors, size_t n, size_t dim, double* out) {
  return guarded([&] {
    need(vectors, "vectors");
    need(out, "out");
    require(dim >= 1, "dim must be >= 1");
    std::vector<std::vector<double>> vs(n);
    for (size_t i = 0; i < n; ++i) vs[i].assign(vectors + i * dim, vectors + (i + 1) * dim);
    const auto e = entanglement_all(vs);
    std::copy(e.begin(), e.end(), out);
  });
}

entlab_status entlab_entangle(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                              char** report_json) {
  return guarded([&] {
    need(m, "model");
    need(ds, "dataset");
    const json o = parse_opt(options_json);
    check_keys(o, {"seed", "l2", "iterations", "probe_copies"}, "entangle options");
    const std::uint64_t seed = o.value("seed", std::uint64_t{0});
    const int probe_copies = o.value("probe_copies", 200);
    const ProbeConfig pc = probe_cfg(o);
    // probe_copies > 0 rebuilds the corpus recipe at that scale; 0 uses the dataset as given.
    Dataset scaled;
    const Dataset* probe_ds = &ds->data;
    if (probe_copies > 0) {
      CorpusConfig cc = ds->data.config;
      cc.copies_per_feature = probe_copies;
      scaled = build_dataset(cc);
      probe_ds = &scaled;
    }
    const ActivationCache cache(m->model, *probe_ds);
    const DirectionSet dirs = feature_directions(cache, hash64(seed, {3}), pc);
    std::vector<std::vector<double>> vs;
    std::vector<bool> is_target;
    const int V = ds->data.config.num_states;
    for (const auto& d : dirs.directions) {
      vs.push_back(d.v);
      is_target.push_back(d.feature.chain_id == ds->data.config.target_chain);
    }
    const EntanglementReport r = entanglement_report(vs, is_target);
    json per = json::array();
    for (std::size_t i = 0; i < vs.size(); ++i)
      per.push_back({{"feature_id", dirs.directions[i].feature.index(V)}, {"is_target", bool(is_target[i])},
                     {"entanglement", r.per_feature[i]}});
    auto nn = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
    put(report_json, {{"direction_layer", dirs.layer.layer},
                      {"features", per},
                      {"target_mean", nn(r.target_mean)},
                      {"control_mean", nn(r.control_mean)},
                      {"mean", r.mean},
                      {"max", r.max},
                      {"welch_bound", r.welch},
                      {"num_features", r.num_features},
                      {"dim", r.dim}});
  });
}

entlab_status entlab_compare(const double* a, size_t n_a, const double* b, size_t n_b, int bootstrap_n,
                             uint64_t seed, char** json_out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(json_out, "json_out");
    const StatsResult r = compare_distributions(std::span(a, n_a), std::span(b, n_b), bootstrap_n, seed);
    put(json_out, {{"mean_a", r.mean_a},
                   {"mean_b", r.mean_b},
                   {"mean_difference", r.mean_difference},
                   {"t", r.t},
                   {"df", r.df},
                   {"p_value", r.p_value},
                   {"ci95", {r.ci_lower, r.ci_upper}},
                   {"n_a", r.n_a},
                   {"n_b", r.n_b},
                   {"degenerate", r.degenerate}});
  });
}

entlab_status entlab_steer(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                           char** result_json) {
  return guarded([&] {
    need(m, "model");
    need(ds, "dataset");
    const json o = parse_opt(options_json);
    check_keys(o, {"seed", "alpha", "k", "sign", "n_samples", "temperature", "head_probe_copies", "l2", "iterations",
                   "min_match"},
               "steer options");
    const std::uint64_t seed = o.value("seed", std::uint64_t{0});
    const double alpha = o.value("alpha", kSteerWeak);
    const int k = o.value("k", 4);
    const int sign = o.value("sign", -1);
    require(sign == 1 || sign == -1, "sign must be +1 or -1");
    require(alpha >= 0, "alpha must be >= 0");
    const HeadSetup h = head_setup(m->model, ds->data, seed, o.value("head_probe_copies", 10),
                                   PositionRule::last_token(), probe_cfg(o));
    require(k >= 0 && static_cast<std::size_t>(k) <= h.table.probes.size(), "k exceeds the number of heads");
    const SteeringPlan plan = build_plan(h.table, k, alpha, sign);
    SteerEvalConfig sc;
    sc.n_samples = o.value("n_samples", std::size_t{1000});
    sc.temperature = o.value("temperature", 1.0);
    sc.min_match = o.value("min_match", 1.0);
    sc.seed = hash64(seed, {6});
    require(sc.n_samples >= 1, "n_samples must be >= 1");
    const Dataset held = heldout_for(ds->data, seed);
    const GenerationEval base = eval_steering(m->model, SteeringPlan{}, held, sc);
    const GenerationEval steered = eval_steering(m->model, plan, held, sc);
    json entries = json::array();
    for (const auto& e : plan.entries)
      entries.push_back({{"layer", e.layer}, {"head", e.head}, {"accuracy", e.accuracy}, {"sigma", e.sigma},
                         {"direction", e.direction}});
    put(result_json, {{"alpha", alpha},
                      {"k", k},
                      {"sign", sign},
                      {"plan", entries},
                      {"unsteered", eval_json(base)},
                      {"steered", eval_json(steered)}});
  });
}

entlab_status entlab_sweep(const char* sweep_json, int verbose, char** report_json, size_t* failed_cells) {
  return guarded([&] {
    const SweepConfig cfg = parse_opt(sweep_json).get<SweepConfig>();
    std::function<void(const std::string&)> progress;
    if (verbose) progress = [](const std::string& line) { std::cerr << line << "\n"; };
    const SweepReport r = run_sweep(cfg, progress);
    if (failed_cells) *failed_cells = r.failed_cells();
    put(report_json, report_json_of(r));
  });
}

entlab_status entlab_report(const char* out_dir, char** report_json, size_t* failed_cells) {
  return guarded([&] {
    need(out_dir, "out_dir");
    const SweepReport r = aggregate_directory(out_dir);
    if (failed_cells) *failed_cells = r.failed_cells();
    put(report_json, report_json_of(r));
  });
}

}  // extern "C"
