#include "entlab/sweeper.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "entlab/error.hpp"
#include "entlab/io.hpp"
#include "entlab/plot.hpp"
#include "entlab/rng.hpp"
#include "entlab/steerkit.hpp"

namespace entlab {

namespace fs = std::filesystem;
using nlohmann::json;

void SweepConfig::validate() const {
  require(!grid.empty(), "sweep grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] >= 0.0 && grid[i] <= 1.0, "grid values must lie in [0, 1]");
    require(i == 0 || grid[i] > grid[i - 1], "grid must be strictly increasing");
  }
  require(seeds >= 1, "seeds must be >= 1");
  require(k_heads >= 0 && k_heads <= model.n_layers * model.n_heads, "k_heads exceeds the number of heads");
  for (double a : strengths) require(a >= 0.0, "strengths must be >= 0");
  require(gen_samples >= 1, "gen_samples must be >= 1");
  require(temperature >= 0.0, "temperature must be >= 0");
  require(direction_probe_copies >= 1 && head_probe_copies >= 1, "probe copies must be >= 1");
  require(bootstrap_n >= 1, "bootstrap_n must be >= 1");
  require(jobs >= 1, "jobs must be >= 1");
  require(!out_dir.empty(), "out_dir is empty");
  corpus.validate();
  train.validate();
}

std::size_t SweepReport::failed_cells() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.ok ? 0 : 1;
  return n;
}

std::uint64_t cell_seed(std::uint64_t master_seed, int p_index, int replicate) {
  return hash64(master_seed, {static_cast<std::uint64_t>(p_index), static_cast<std::uint64_t>(replicate)});
}

fs::path cell_dir(const fs::path& out, int p_index, int replicate) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "p%02d_r%02d", p_index, replicate);
  return out / "cells" / buf;
}

namespace {

// One chain set per sweep: every cell shares the chains and the corpus
// recipe; replicates differ only in model init, batch order and probe splits.
CorpusConfig cell_corpus(const SweepConfig& cfg, double p) {
  CorpusConfig cc = cfg.corpus;
  cc.composition_p = p;
  cc.seed = hash64(cfg.master_seed, {0xC0});
  return cc;
}

std::string steer_csv(const CellResult& c) {
  std::string s = "alpha,K,sign,n_samples,target_count,target_rate,target_rate_loose,heldout_ce\n";
  for (const auto& r : c.steering)
    s += fmt6(r.alpha) + "," + std::to_string(r.k) + "," + std::to_string(r.sign) + "," +
         std::to_string(r.n_samples) + "," + std::to_string(r.target_count) + "," + fmt6(r.target_rate) + "," +
         fmt6(r.target_rate_loose) + "," + fmt6(r.heldout_ce) + "\n";
  return s;
}

SteerRow steer_row(const GenerationEval& g, double alpha, int k, int sign) {
  SteerRow r;
  r.alpha = alpha;
  r.k = k;
  r.sign = sign;
  r.n_samples = g.n_samples;
  r.target_count = g.target_count;
  r.target_rate = g.target_rate;
  r.target_rate_loose = g.target_rate_loose;
  r.heldout_ce = g.heldout_ce;
  return r;
}

void analyze(const SweepConfig& cfg, const Dataset& ds, const ModelState& model, std::uint64_t train_seed,
             CellResult& c, const fs::path& dir) {
  const CorpusConfig& cc = ds.config;

  // Feature directions from a corpus with the training composition, scaled up
  // so rare target features still get probe rows on both sides of the split.
  CorpusConfig pc = cc;
  pc.copies_per_feature = cfg.direction_probe_copies;
  const Dataset probe_ds = build_dataset(pc);
  const ActivationCache dcache(model, probe_ds);
  const DirectionSet dirs = feature_directions(dcache, hash64(c.cell_seed, {3}), cfg.probe);
  write_directions_csv(dirs, cc.num_states, dir / "directions.csv");
  c.direction_layer = dirs.layer.layer;
  c.layer_mean_accuracy = dirs.layer.mean_accuracy;

  std::vector<std::vector<double>> vs;
  std::vector<bool> is_target;
  for (const auto& d : dirs.directions) {
    vs.push_back(d.v);
    is_target.push_back(d.feature.chain_id == cc.target_chain);
  }
  const EntanglementReport er = entanglement_report(vs, is_target);
  c.entanglement.clear();
  for (std::size_t i = 0; i < dirs.directions.size(); ++i)
    c.entanglement.push_back({dirs.directions[i].feature.index(cc.num_states), is_target[i], er.per_feature[i]});
  c.target_mean = er.target_mean;
  c.control_mean = er.control_mean;
  c.max_e = er.max;
  c.welch = er.welch;

  // Head probes: every feature of every chain, labeled by target membership.
  const Dataset labeled = materialize_features(ds, cfg.head_probe_copies, true, hash64(c.cell_seed, {4}));
  const ActivationCache hcache(model, labeled);
  const int target = cc.target_chain;
  const HeadTable table = head_accuracy_table(
      hcache, [target](const Example& e) { return e.feature.chain_id == target ? 1 : 0; }, hash64(c.cell_seed, {5}),
      PositionRule::last_token(), cfg.probe);
  write_head_acc_csv(table, dir / "head_acc.csv");
  c.head_accuracy = table.distribution();
  c.right_tail = table.right_tail_mass(cfg.tail_threshold);

  const Dataset held = heldout_for(ds, train_seed);
  SteerEvalConfig sc;
  sc.n_samples = static_cast<std::size_t>(cfg.gen_samples);
  sc.temperature = cfg.temperature;
  sc.seed = hash64(c.cell_seed, {6});
  c.steering.clear();
  c.steering.push_back(steer_row(eval_steering(model, SteeringPlan{}, held, sc), 0.0, 0, 0));
  for (double alpha : cfg.strengths) {
    const SteeringPlan plan = build_plan(table, cfg.k_heads, alpha, -1);
    c.steering.push_back(steer_row(eval_steering(model, plan, held, sc), alpha, cfg.k_heads, -1));
  }
  write_text_file(dir / "steer.csv", steer_csv(c));
}

bool reusable(const fs::path& dir, CellResult& out) {
  const fs::path f = dir / "cell.json";
  if (!fs::exists(f) || !fs::exists(dir / "model.bin")) return false;
  try {
    CellResult c = cell_from_json(parse_json_file(f));
    const std::string kind = parse_json_file(f).value("failure", "");
    if (!c.ok && kind != "diverged") return false;
    c.trained = false;
    out = std::move(c);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

json sweep_identity(const SweepConfig& cfg) {
  json j = cfg;
  j.erase("jobs");
  j.erase("out_dir");
  return j;
}

}  // namespace

CellResult run_cell(const SweepConfig& cfg, int p_index, int replicate) {
  CellResult c;
  c.p_index = p_index;
  c.replicate = replicate;
  c.composition_p = cfg.grid.at(static_cast<std::size_t>(p_index));
  c.cell_seed = cell_seed(cfg.master_seed, p_index, replicate);
  const fs::path dir = cell_dir(cfg.out_dir, p_index, replicate);
  std::string failure;
  try {
    fs::create_directories(dir);
    const CorpusConfig cc = cell_corpus(cfg, c.composition_p);
    const Dataset ds = build_dataset(cc);
    save_dataset(ds, dir / "data");
    ModelConfig mc = cfg.model;
    mc.vocab_size = cc.vocab_size();
    mc.max_seq_len = std::max(mc.max_seq_len, cc.body_length() + 1);
    mc.seed = hash64(c.cell_seed, {1});
    TrainConfig tc = cfg.train;
    tc.seed = hash64(c.cell_seed, {2});
    c.trained = true;
    TrainResult tr = [&] {
      try {
        return train(ds, mc, tc);
      } catch (const TrainingDiverged& e) {
        c.run = e.record();
        failure = "diverged";
        throw;
      }
    }();
    save_checkpoint(tr.model, dir / "model.bin");
    c.run = tr.record;
    c.run.checkpoint_path = "model.bin";
    c.run.wall_clock_seconds = 0.0;  // kept out of the deterministic outputs
    write_text_file(dir / "run.json", json(c.run).dump(2) + "\n");
    analyze(cfg, ds, tr.model, tc.seed, c, dir);
    c.ok = true;
  } catch (const std::exception& e) {
    c.ok = false;
    c.diagnostic = e.what();
    if (failure.empty()) failure = "error";
  }
  json j = cell_to_json(c);
  if (!c.ok) j["failure"] = failure;
  try {
    write_text_file(dir / "cell.json", j.dump(2) + "\n");
  } catch (const std::exception& e) {
    c.ok = false;
    c.diagnostic += std::string(c.diagnostic.empty() ? "" : "; ") + e.what();
  }
  return c;
}

SweepReport run_sweep(const SweepConfig& cfg, const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const fs::path sj = out / "sweep.json";
  if (fs::exists(sj)) {
    SweepConfig prev = parse_json_file(sj).get<SweepConfig>();
    if (sweep_identity(prev) != sweep_identity(cfg))
      fail(ErrorCode::kInvalidArgument, out.string() + " holds a sweep with a different configuration");
  } else {
    write_text_file(sj, sweep_identity(cfg).dump(2) + "\n");
  }

  const std::size_t total = cfg.num_cells();
  std::vector<CellResult> cells(total);
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const int pi = static_cast<int>(i) / cfg.seeds, rep = static_cast<int>(i) % cfg.seeds;
      const auto t0 = std::chrono::steady_clock::now();
      CellResult c;
      const bool reused = reusable(cell_dir(out, pi, rep), c);
      if (!reused) c = run_cell(cfg, pi, rep);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (progress) {
        std::lock_guard lk(log_mu);
        progress("cell p=" + fmt6(c.composition_p) + " rep=" + std::to_string(rep) + (reused ? " reused" : "") +
                 (c.ok ? " ok" : " FAILED: " + c.diagnostic) + " (" + fmt6(secs) + "s)");
      }
      cells[i] = std::move(c);
    }
  };
  const int nthreads = std::min<int>(cfg.jobs, static_cast<int>(total));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
  }
  SweepReport rep = aggregate(cfg, std::move(cells));
  for (const auto& c : rep.cells) rep.cells_trained += c.trained ? 1 : 0;
  return rep;
}

namespace {

double finite_mean(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  return f.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(f);
}

double finite_std(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  return f.empty() ? std::numeric_limits<double>::quiet_NaN() : sample_stddev(f);
}

const SteerRow* find_row(const CellResult& c, double alpha, int sign) {
  for (const auto& r : c.steering)
    if (r.sign == sign && (sign == 0 || r.alpha == alpha)) return &r;
  return nullptr;
}

std::string p_label(double p) { return fmt6(p); }

}  // namespace

SweepReport aggregate(const SweepConfig& cfg, std::vector<CellResult> cells) {
  SweepReport rep;
  rep.config = cfg;
  std::stable_sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
    return std::pair(a.p_index, a.replicate) < std::pair(b.p_index, b.replicate);
  });
  rep.cells = std::move(cells);
  const fs::path out(cfg.out_dir);
  const std::size_t ns = cfg.strengths.size();

  // Curves.
  for (std::size_t pi = 0; pi < cfg.grid.size(); ++pi) {
    CurvePoint cp;
    cp.composition_p = cfg.grid[pi];
    std::vector<double> te, ce, ur, hc;
    std::vector<std::vector<double>> sr(ns);
    for (const auto& c : rep.cells) {
      if (c.p_index != static_cast<int>(pi) || !c.ok) continue;
      ++cp.n_cells;
      cp.n_converged += c.run.converged ? 1 : 0;
      te.push_back(c.target_mean);
      ce.push_back(c.control_mean);
      hc.push_back(c.run.heldout_ce);
      if (const auto* r = find_row(c, 0.0, 0)) ur.push_back(r->target_rate);
      for (std::size_t s = 0; s < ns; ++s)
        if (const auto* r = find_row(c, cfg.strengths[s], -1)) sr[s].push_back(r->target_rate);
    }
    cp.target_e_mean = finite_mean(te);
    cp.target_e_std = finite_std(te);
    cp.control_e_mean = finite_mean(ce);
    cp.control_e_std = finite_std(ce);
    cp.unsteered_rate_mean = finite_mean(ur);
    cp.unsteered_rate_std = finite_std(ur);
    cp.heldout_ce_mean = finite_mean(hc);
    cp.heldout_ce_std = finite_std(hc);
    for (std::size_t s = 0; s < ns; ++s) {
      cp.steered_rate_mean.push_back(finite_mean(sr[s]));
      cp.steered_rate_std.push_back(finite_std(sr[s]));
    }
    rep.curves.push_back(std::move(cp));
  }

  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& body) {
    write_text_file(out / name, body);
    files.push_back(name);
  };

  {
    std::string s =
        "p_index,replicate,composition_p,seed,status,converged,heldout_ce,control_ce,bayes_control_ce,"
        "direction_layer,target_mean,control_mean,max_entanglement,welch_bound,right_tail,diagnostic\n";
    for (const auto& c : rep.cells) {
      std::string diag = c.diagnostic;
      for (char& ch : diag)
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      s += std::to_string(c.p_index) + "," + std::to_string(c.replicate) + "," + fmt6(c.composition_p) + "," +
           std::to_string(c.cell_seed) + "," + (c.ok ? "ok" : "failed") + "," + (c.run.converged ? "1" : "0") +
           "," + fmt6(c.run.heldout_ce) + "," + fmt6(c.run.control_ce) + "," + fmt6(c.run.bayes_control_ce) + ",";
      if (c.ok)
        s += std::to_string(c.direction_layer) + "," + fmt6(c.target_mean) + "," + fmt6(c.control_mean) + "," +
             fmt6(c.max_e) + "," + fmt6(c.welch) + "," + fmt6(c.right_tail) + ",";
      else
        s += ",,,,,,";
      s += diag + "\n";
    }
    emit("cells.csv", s);
  }
  {
    std::string s = "composition_p,replicate,seed,feature_id,chain,start_state,is_target,entanglement\n";
    const int V = cfg.corpus.num_states;
    for (const auto& c : rep.cells) {
      if (!c.ok) continue;
      for (const auto& e : c.entanglement)
        s += fmt6(c.composition_p) + "," + std::to_string(c.replicate) + "," + std::to_string(c.cell_seed) + "," +
             std::to_string(e.feature_id) + "," + std::to_string(e.feature_id / V) + "," +
             std::to_string(e.feature_id % V) + "," + (e.is_target ? "1" : "0") + "," + fmt6(e.e) + "\n";
    }
    emit("entanglement.csv", s);
  }
  {
    std::string s =
        "composition_p,replicate,seed,alpha,K,sign,target_rate,heldout_ce,n_samples,target_count,target_rate_loose\n";
    for (const auto& c : rep.cells) {
      if (!c.ok) continue;
      for (const auto& r : c.steering)
        s += fmt6(c.composition_p) + "," + std::to_string(c.replicate) + "," + std::to_string(c.cell_seed) + "," +
             fmt6(r.alpha) + "," + std::to_string(r.k) + "," + std::to_string(r.sign) + "," + fmt6(r.target_rate) +
             "," + fmt6(r.heldout_ce) + "," + std::to_string(r.n_samples) + "," + std::to_string(r.target_count) +
             "," + fmt6(r.target_rate_loose) + "\n";
    }
    emit("steer_eval.csv", s);
  }
  {
    std::string s = "composition_p,replicate,seed,layer,head,accuracy\n";
    const int H = cfg.model.n_heads;
    for (const auto& c : rep.cells) {
      if (!c.ok) continue;
      for (std::size_t i = 0; i < c.head_accuracy.size(); ++i)
        s += fmt6(c.composition_p) + "," + std::to_string(c.replicate) + "," + std::to_string(c.cell_seed) + "," +
             std::to_string(static_cast<int>(i) / H) + "," + std::to_string(static_cast<int>(i) % H) + "," +
             fmt6(c.head_accuracy[i]) + "\n";
    }
    emit("head_acc_all.csv", s);
  }
  {
    std::string s =
        "composition_p,n_cells,n_converged,target_e_mean,target_e_std,control_e_mean,control_e_std,unsteered_rate_mean,"
        "unsteered_rate_std";
    for (double a : cfg.strengths) s += ",steered_a" + fmt6(a) + "_mean,steered_a" + fmt6(a) + "_std";
    s += ",heldout_ce_mean,heldout_ce_std\n";
    for (const auto& cp : rep.curves) {
      s += fmt6(cp.composition_p) + "," + std::to_string(cp.n_cells) + "," + std::to_string(cp.n_converged) + "," +
           fmt6(cp.target_e_mean) + "," +
           fmt6(cp.target_e_std) + "," + fmt6(cp.control_e_mean) + "," + fmt6(cp.control_e_std) + "," +
           fmt6(cp.unsteered_rate_mean) + "," + fmt6(cp.unsteered_rate_std);
      for (std::size_t s2 = 0; s2 < ns; ++s2)
        s += "," + fmt6(cp.steered_rate_mean[s2]) + "," + fmt6(cp.steered_rate_std[s2]);
      s += "," + fmt6(cp.heldout_ce_mean) + "," + fmt6(cp.heldout_ce_std) + "\n";
    }
    emit("curves.csv", s);
  }

  // Head-accuracy distributions at the lowest and highest composition.
  std::vector<double> ha, hb;
  for (const auto& c : rep.cells) {
    if (!c.ok) continue;
    if (c.p_index == 0) ha.insert(ha.end(), c.head_accuracy.begin(), c.head_accuracy.end());
    if (c.p_index == static_cast<int>(cfg.grid.size()) - 1)
      hb.insert(hb.end(), c.head_accuracy.begin(), c.head_accuracy.end());
  }
  constexpr int kBins = 20;
  std::vector<double> cnt_a(kBins, 0.0), cnt_b(kBins, 0.0);
  auto bin = [](double x) { return std::clamp(static_cast<int>(std::floor(x * kBins)), 0, kBins - 1); };
  for (double x : ha) cnt_a[bin(x)] += 1;
  for (double x : hb) cnt_b[bin(x)] += 1;
  {
    std::string s = "bin_lo,bin_hi,count_p" + fmt6(cfg.grid.front()) + ",count_p" + fmt6(cfg.grid.back()) + "\n";
    for (int b = 0; b < kBins; ++b)
      s += fmt6(b / double(kBins)) + "," + fmt6((b + 1) / double(kBins)) + "," + fmt6(cnt_a[b]) + "," +
           fmt6(cnt_b[b]) + "\n";
    emit("head_acc_hist.csv", s);
  }
  json stats = json::object();
  if (ha.size() >= 2 && hb.size() >= 2 && cfg.grid.size() >= 2) {
    rep.has_head_comparison = true;
    rep.head_comparison = compare_distributions(ha, hb, cfg.bootstrap_n, hash64(cfg.master_seed, {0x57A7}));
    const auto& r = rep.head_comparison;
    stats["head_accuracy"] = {{"a_composition_p", cfg.grid.front()},
                              {"b_composition_p", cfg.grid.back()},
                              {"n_a", r.n_a},
                              {"n_b", r.n_b},
                              {"mean_a", r.mean_a},
                              {"mean_b", r.mean_b},
                              {"mean_difference", r.mean_difference},
                              {"t", r.t},
                              {"df", r.df},
                              {"p_value", r.p_value},
                              {"ci95", {r.ci_lower, r.ci_upper}},
                              {"bootstrap_n", cfg.bootstrap_n},
                              {"degenerate", r.degenerate}};
  }
  {
    // Trend summary on the target-entanglement means, p > 0 only.
    std::vector<double> xs, ys;
    for (const auto& cp : rep.curves)
      if (cp.composition_p > 0 && std::isfinite(cp.target_e_mean)) {
        xs.push_back(cp.composition_p);
        ys.push_back(cp.target_e_mean);
      }
    if (xs.size() >= 2) stats["target_entanglement_spearman"] = spearman_rho(xs, ys);
  }
  emit("stats.json", stats.dump(2) + "\n");

  // Plots; every value drawn here also appears in curves.csv or head_acc_hist.csv.
  std::vector<std::string> labels;
  for (double p : cfg.grid) labels.push_back(p_label(p));
  auto column = [&](auto get) {
    std::vector<double> v;
    for (const auto& cp : rep.curves) v.push_back(get(cp));
    return v;
  };
  {
    plot::LineChart ch;
    ch.title = "Feature entanglement vs. target-chain share";
    ch.x_label = "composition p";
    ch.y_label = "mean entanglement";
    ch.x_labels = labels;
    ch.series.push_back({"target", column([](auto& c) { return c.target_e_mean; }),
                         column([](auto& c) { return c.target_e_std; })});
    ch.series.push_back({"control", column([](auto& c) { return c.control_e_mean; }),
                         column([](auto& c) { return c.control_e_std; })});
    emit("entanglement.svg", plot::render(ch));
  }
  {
    plot::LineChart ch;
    ch.title = "Target-chain generation rate";
    ch.x_label = "composition p";
    ch.y_label = "target rate";
    ch.x_labels = labels;
    ch.series.push_back({"unsteered", column([](auto& c) { return c.unsteered_rate_mean; }),
                         column([](auto& c) { return c.unsteered_rate_std; })});
    for (std::size_t s = 0; s < ns; ++s)
      ch.series.push_back({"alpha " + fmt6(cfg.strengths[s]),
                           column([s](auto& c) { return c.steered_rate_mean[s]; }),
                           column([s](auto& c) { return c.steered_rate_std[s]; })});
    emit("steering.svg", plot::render(ch));
  }
  {
    plot::LineChart ch;
    ch.title = "Held-out cross-entropy";
    ch.x_label = "composition p";
    ch.y_label = "nats";
    ch.x_labels = labels;
    double top = 0.0;
    for (const auto& cp : rep.curves)
      if (std::isfinite(cp.heldout_ce_mean)) top = std::max(top, cp.heldout_ce_mean + cp.heldout_ce_std);
    ch.y_max = top > 0 ? std::ceil(top * 10.0) / 10.0 : 1.0;
    ch.series.push_back({"held-out CE", column([](auto& c) { return c.heldout_ce_mean; }),
                         column([](auto& c) { return c.heldout_ce_std; })});
    emit("heldout_ce.svg", plot::render(ch));
  }
  {
    plot::BarChart ch;
    ch.title = "Head probe accuracy";
    ch.x_label = "accuracy bin (lower edge)";
    ch.y_label = "heads";
    for (int b = 0; b < kBins; ++b) ch.x_labels.push_back(b % 2 == 0 ? fmt6(b / double(kBins)) : "");
    ch.series.push_back({"p=" + fmt6(cfg.grid.front()), cnt_a, {}});
    ch.series.push_back({"p=" + fmt6(cfg.grid.back()), cnt_b, {}});
    emit("head_acc_hist.svg", plot::render(ch));
  }

  json manifest;
  manifest["cells_total"] = rep.cells.size();
  manifest["cells_ok"] = rep.cells.size() - rep.failed_cells();
  json failed = json::array();
  for (const auto& c : rep.cells)
    if (!c.ok)
      failed.push_back({{"p_index", c.p_index},
                        {"replicate", c.replicate},
                        {"composition_p", c.composition_p},
                        {"diagnostic", c.diagnostic}});
  manifest["failed_cells"] = failed;
  json unconverged = json::array();
  for (const auto& c : rep.cells)
    if (c.ok && !c.run.converged)
      unconverged.push_back({{"p_index", c.p_index}, {"replicate", c.replicate}, {"composition_p", c.composition_p}});
  manifest["unconverged_cells"] = unconverged;
  json cell_dirs = json::array();
  for (const auto& c : rep.cells) cell_dirs.push_back(fs::relative(cell_dir(out, c.p_index, c.replicate), out).string());
  manifest["cell_dirs"] = cell_dirs;
  files.push_back("manifest.json");
  manifest["files"] = files;
  write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
  rep.files = files;
  return rep;
}

SweepReport aggregate_directory(const fs::path& out_dir) {
  const fs::path sj = out_dir / "sweep.json";
  if (!fs::exists(sj)) fail(ErrorCode::kNotFound, "no sweep.json in " + out_dir.string());
  SweepConfig cfg = parse_json_file(sj).get<SweepConfig>();
  cfg.out_dir = out_dir.string();
  std::vector<CellResult> cells;
  for (int pi = 0; pi < static_cast<int>(cfg.grid.size()); ++pi)
    for (int r = 0; r < cfg.seeds; ++r) {
      const fs::path f = cell_dir(out_dir, pi, r) / "cell.json";
      CellResult c;
      c.p_index = pi;
      c.replicate = r;
      c.composition_p = cfg.grid[static_cast<std::size_t>(pi)];
      c.cell_seed = cell_seed(cfg.master_seed, pi, r);
      if (!fs::exists(f)) {
        c.diagnostic = "missing";
      } else {
        try {
          c = cell_from_json(parse_json_file(f));
        } catch (const std::exception& e) {
          c.ok = false;
          c.diagnostic = std::string("unreadable cell.json: ") + e.what();
        }
      }
      cells.push_back(std::move(c));
    }
  return aggregate(cfg, std::move(cells));
}

namespace {

json nan_safe(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double from_nullable(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

json cell_to_json(const CellResult& c) {
  json ent = json::array();
  for (const auto& e : c.entanglement) ent.push_back({{"feature_id", e.feature_id}, {"is_target", e.is_target}, {"e", e.e}});
  json steer = json::array();
  for (const auto& r : c.steering)
    steer.push_back({{"alpha", r.alpha},
                     {"k", r.k},
                     {"sign", r.sign},
                     {"n_samples", r.n_samples},
                     {"target_count", r.target_count},
                     {"target_rate", r.target_rate},
                     {"target_rate_loose", r.target_rate_loose},
                     {"heldout_ce", r.heldout_ce}});
  return {{"p_index", c.p_index},
          {"replicate", c.replicate},
          {"composition_p", c.composition_p},
          {"cell_seed", c.cell_seed},
          {"ok", c.ok},
          {"diagnostic", c.diagnostic},
          {"run", c.run},
          {"direction_layer", c.direction_layer},
          {"layer_mean_accuracy", c.layer_mean_accuracy},
          {"entanglement", ent},
          {"target_mean", nan_safe(c.target_mean)},
          {"control_mean", nan_safe(c.control_mean)},
          {"max_entanglement", nan_safe(c.max_e)},
          {"welch_bound", nan_safe(c.welch)},
          {"head_accuracy", c.head_accuracy},
          {"right_tail", c.right_tail},
          {"steering", steer}};
}

CellResult cell_from_json(const json& j) {
  CellResult c;
  try {
    c.p_index = j.at("p_index").get<int>();
    c.replicate = j.at("replicate").get<int>();
    c.composition_p = j.at("composition_p").get<double>();
    c.cell_seed = j.at("cell_seed").get<std::uint64_t>();
    c.ok = j.at("ok").get<bool>();
    c.diagnostic = j.at("diagnostic").get<std::string>();
    c.run = j.at("run").get<RunRecord>();
    c.direction_layer = j.at("direction_layer").get<int>();
    c.layer_mean_accuracy = j.at("layer_mean_accuracy").get<std::vector<double>>();
    for (const auto& e : j.at("entanglement"))
      c.entanglement.push_back({e.at("feature_id").get<int>(), e.at("is_target").get<bool>(), e.at("e").get<double>()});
    c.target_mean = from_nullable(j.at("target_mean"));
    c.control_mean = from_nullable(j.at("control_mean"));
    c.max_e = from_nullable(j.at("max_entanglement"));
    c.welch = from_nullable(j.at("welch_bound"));
    c.head_accuracy = j.at("head_accuracy").get<std::vector<double>>();
    c.right_tail = j.at("right_tail").get<double>();
    for (const auto& r : j.at("steering")) {
      SteerRow s;
      s.alpha = r.at("alpha").get<double>();
      s.k = r.at("k").get<int>();
      s.sign = r.at("sign").get<int>();
      s.n_samples = r.at("n_samples").get<std::size_t>();
      s.target_count = r.at("target_count").get<std::size_t>();
      s.target_rate = r.at("target_rate").get<double>();
      s.target_rate_loose = r.at("target_rate_loose").get<double>();
      s.heldout_ce = r.at("heldout_ce").get<double>();
      c.steering.push_back(s);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("cell record: ") + e.what());
  }
  return c;
}

void to_json(json& j, const SweepConfig& c) {
  j = {{"grid", c.grid},
       {"seeds", c.seeds},
       {"master_seed", c.master_seed},
       {"corpus", c.corpus},
       {"model", c.model},
       {"train", c.train},
       {"strengths", c.strengths},
       {"k_heads", c.k_heads},
       {"gen_samples", c.gen_samples},
       {"temperature", c.temperature},
       {"direction_probe_copies", c.direction_probe_copies},
       {"head_probe_copies", c.head_probe_copies},
       {"probe", {{"l2", c.probe.l2}, {"iterations", c.probe.iterations}}},
       {"bootstrap_n", c.bootstrap_n},
       {"tail_threshold", c.tail_threshold},
       {"out_dir", c.out_dir},
       {"jobs", c.jobs}};
}

void from_json(const json& j, SweepConfig& c) {
  check_keys(j,
             {"grid", "seeds", "master_seed", "corpus", "model", "train", "strengths", "k_heads", "gen_samples",
              "temperature", "direction_probe_copies", "head_probe_copies", "probe", "bootstrap_n",
              "tail_threshold", "out_dir", "jobs"},
             "sweep config");
  get_opt(j, "grid", c.grid);
  get_opt(j, "seeds", c.seeds);
  get_opt(j, "master_seed", c.master_seed);
  get_opt(j, "corpus", c.corpus);
  get_opt(j, "model", c.model);
  get_opt(j, "train", c.train);
  get_opt(j, "strengths", c.strengths);
  get_opt(j, "k_heads", c.k_heads);
  get_opt(j, "gen_samples", c.gen_samples);
  get_opt(j, "temperature", c.temperature);
  get_opt(j, "direction_probe_copies", c.direction_probe_copies);
  get_opt(j, "head_probe_copies", c.head_probe_copies);
  if (j.contains("probe")) {
    const json& p = j.at("probe");
    check_keys(p, {"l2", "iterations"}, "probe config");
    get_opt(p, "l2", c.probe.l2);
    get_opt(p, "iterations", c.probe.iterations);
  }
  get_opt(j, "bootstrap_n", c.bootstrap_n);
  get_opt(j, "tail_threshold", c.tail_threshold);
  get_opt(j, "out_dir", c.out_dir);
  get_opt(j, "jobs", c.jobs);
}

}  // namespace entlab
