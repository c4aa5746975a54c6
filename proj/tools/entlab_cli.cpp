// entlab command line; a thin shell over the C API.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "entlab/entlab.h"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
};

// Non-zero C status -> message on stderr and a process exit code.
class CallFailed : public std::runtime_error {
 public:
  explicit CallFailed(entlab_status s)
      : std::runtime_error(std::string(entlab_status_name(s)) + ": " + entlab_last_error()), status(s) {}
  entlab_status status;
};

void check(entlab_status s) {
  if (s != ENTLAB_OK) throw CallFailed(s);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  entlab_string_free(s);
  return out;
}

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return json::parse(f);
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text << "\n";
}

struct DatasetHandle {
  entlab_dataset* p = nullptr;
  ~DatasetHandle() { entlab_dataset_free(p); }
};
struct ModelHandle {
  entlab_model* p = nullptr;
  ~ModelHandle() { entlab_model_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entlab: Markov-chain superposition lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Parallel cells")->check(CLI::PositiveNumber)->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a composition-controlled chain corpus");
  std::string gen_config;
  json corpus = json::object();
  int states = 4, chains = 3, copies = 100, target = 0;
  double p = 1.0;
  gen->add_option("--config", gen_config, "Corpus config JSON (flags override)");
  gen->add_option("--states", states, "Number of states V");
  gen->add_option("--chains", chains, "Number of chains");
  gen->add_option("--copies", copies, "Copies per control feature");
  gen->add_option("-p,--composition", p, "Target-chain composition fraction");
  gen->add_option("--target", target, "Target chain id");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  std::string data_dir, model_config, train_config;
  int steps = -1;
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--model-cfg,--model-config", model_config, "Model config JSON");
  tr->add_option("--train-cfg,--train-config", train_config, "Train config JSON");
  tr->add_option("--steps", steps, "Override optimizer steps");

  // probe
  auto* pr = app.add_subcommand("probe", "Head probes, feature directions and logit lens");
  std::string model_path, rule = "last_token";
  int lens_k = 3, head_copies = 10;
  pr->add_option("--model", model_path, "Checkpoint")->required();
  pr->add_option("--data", data_dir, "Dataset directory")->required();
  pr->add_option("--rule", rule, "Head-probe position rule")->check(CLI::IsMember({"last_token", "all_positions"}));
  pr->add_option("--lens-k", lens_k, "Logit-lens tokens per direction");
  pr->add_option("--head-copies", head_copies, "Copies per feature in the head-probe set");

  // entangle
  auto* en = app.add_subcommand("entangle", "Entanglement of feature directions");
  int probe_copies = 200;
  en->add_option("--model", model_path, "Checkpoint")->required();
  en->add_option("--data", data_dir, "Dataset directory")->required();
  en->add_option("--probe-copies", probe_copies, "Rebuild the corpus at this many copies per feature (0: as given)");

  // steer
  auto* st = app.add_subcommand("steer", "Head-steered generation against the unsteered baseline");
  double alpha = 4.0, temperature = 1.0;
  int k = 4, sign = -1, samples = 1000;
  st->add_option("--model", model_path, "Checkpoint")->required();
  st->add_option("--data", data_dir, "Dataset directory")->required();
  st->add_option("--alpha", alpha, "Strength (4 weak, 8 medium, 12 strong)");
  st->add_option("-k,--heads", k, "Heads to steer");
  st->add_option("--sign", sign, "+1 promotes, -1 suppresses")->check(CLI::IsMember({-1, 1}));
  st->add_option("--samples", samples, "Generations");
  st->add_option("--temperature", temperature, "Sampling temperature (0 = greedy)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Full composition x seed grid");
  std::string sweep_config;
  std::vector<double> grid;
  int seeds = -1;
  bool quiet = false;
  sw->add_option("--config", sweep_config, "Sweep config JSON (flags override)");
  sw->add_option("--grid", grid, "Composition grid");
  sw->add_option("--seeds", seeds, "Replicates per composition");
  sw->add_option("--steps", steps, "Override optimizer steps");
  sw->add_flag("-q,--quiet", quiet, "No per-cell progress");

  // report
  auto* rp = app.add_subcommand("report", "Re-aggregate an existing sweep directory (--out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      corpus = read_json(gen_config);
      if (gen->count("--states")) corpus["num_states"] = states;
      if (gen->count("--chains")) corpus["num_chains"] = chains;
      if (gen->count("--copies")) corpus["copies_per_feature"] = copies;
      if (gen->count("--composition")) corpus["composition_p"] = p;
      if (gen->count("--target")) corpus["target_chain"] = target;
      corpus["seed"] = g.seed;
      DatasetHandle ds;
      check(entlab_dataset_build(corpus.dump().c_str(), &ds.p));
      check(entlab_dataset_save(ds.p, g.out.c_str()));
      char* info = nullptr;
      check(entlab_dataset_info(ds.p, &info));
      std::cout << take(info) << "\n";
      return 0;
    }
    if (tr->parsed()) {
      DatasetHandle ds;
      check(entlab_dataset_load(data_dir.c_str(), &ds.p));
      json mc = read_json(model_config), tc = read_json(train_config);
      mc["seed"] = g.seed;
      tc["seed"] = g.seed;
      if (steps >= 0) tc["steps"] = steps;
      ModelHandle m;
      char* rec = nullptr;
      const entlab_status s = entlab_train(ds.p, mc.dump().c_str(), tc.dump().c_str(), &m.p, &rec);
      const std::string record = take(rec);
      if (!record.empty()) write_file(fs::path(g.out) / "run.json", record);
      check(s);
      check(entlab_model_save(m.p, (fs::path(g.out) / "model.bin").string().c_str()));
      std::cout << record << "\n";
      if (!json::parse(record).value("converged", false))
        std::cerr << "entlab: warning: control CE is above the Bayes floor + tau (gate not met)\n";
      return 0;
    }
    if (pr->parsed() || en->parsed() || st->parsed()) {
      DatasetHandle ds;
      ModelHandle m;
      check(entlab_dataset_load(data_dir.c_str(), &ds.p));
      check(entlab_model_load(model_path.c_str(), &m.p));
      char* out = nullptr;
      std::string name;
      if (pr->parsed()) {
        const json o = {{"seed", g.seed}, {"rule", rule}, {"lens_k", lens_k}, {"head_probe_copies", head_copies}};
        check(entlab_probe(m.p, ds.p, o.dump().c_str(), g.out.c_str(), &out));
        name = "probe.json";
      } else if (en->parsed()) {
        const json o = {{"seed", g.seed}, {"probe_copies", probe_copies}};
        check(entlab_entangle(m.p, ds.p, o.dump().c_str(), &out));
        name = "entanglement.json";
      } else {
        const json o = {{"seed", g.seed}, {"alpha", alpha}, {"k", k}, {"sign", sign},
                        {"n_samples", samples}, {"temperature", temperature}};
        check(entlab_steer(m.p, ds.p, o.dump().c_str(), &out));
        name = "steer.json";
      }
      const std::string text = take(out);
      write_file(fs::path(g.out) / name, text);
      std::cout << text << "\n";
      return 0;
    }
    if (sw->parsed()) {
      json cfg = read_json(sweep_config);
      cfg["master_seed"] = g.seed;
      cfg["out_dir"] = g.out;
      cfg["jobs"] = g.jobs;
      if (!grid.empty()) cfg["grid"] = grid;
      if (seeds > 0) cfg["seeds"] = seeds;
      if (steps >= 0) cfg["train"]["steps"] = steps;
      char* out = nullptr;
      std::size_t failed = 0;
      check(entlab_sweep(cfg.dump().c_str(), quiet ? 0 : 1, &out, &failed));
      std::cout << take(out) << "\n";
      return failed == 0 ? 0 : 1;
    }
    if (rp->parsed()) {
      char* out = nullptr;
      std::size_t failed = 0;
      check(entlab_report(g.out.c_str(), &out, &failed));
      std::cout << take(out) << "\n";
      return failed == 0 ? 0 : 1;
    }
  } catch (const CallFailed& e) {
    std::cerr << "entlab: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "entlab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
