#include "entlab/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "entlab/error.hpp"

namespace entlab {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    f << contents;
    if (!f) fail(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string fmt6(double x) {
  if (x == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) fail(ErrorCode::kFormat, std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::kFormat, std::string(what) + ": unknown key '" + key + "'");
  }
}


void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = {{"num_states", c.num_states},       {"num_chains", c.num_chains},
       {"copies_per_feature", c.copies_per_feature}, {"composition_p", c.composition_p},
       {"target_chain", c.target_chain},   {"seed", c.seed},
       {"sequence_length", c.sequence_length}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  check_keys(j, {"num_states", "num_chains", "copies_per_feature", "composition_p", "target_chain", "seed",
                 "sequence_length"},
             "corpus config");
  get_opt(j, "num_states", c.num_states);
  get_opt(j, "num_chains", c.num_chains);
  get_opt(j, "copies_per_feature", c.copies_per_feature);
  get_opt(j, "composition_p", c.composition_p);
  get_opt(j, "target_chain", c.target_chain);
  get_opt(j, "seed", c.seed);
  get_opt(j, "sequence_length", c.sequence_length);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},     {"d_model", c.d_model},         {"n_heads", c.n_heads},
       {"head_dim", c.head_dim},     {"mlp_hidden", c.mlp_hidden},   {"vocab_size", c.vocab_size},
       {"max_seq_len", c.max_seq_len}, {"init_scale", c.init_scale}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  check_keys(j, {"n_layers", "d_model", "n_heads", "head_dim", "mlp_hidden", "vocab_size", "max_seq_len", "init_scale",
                 "seed"},
             "model config");
  get_opt(j, "n_layers", c.n_layers);
  get_opt(j, "d_model", c.d_model);
  get_opt(j, "n_heads", c.n_heads);
  get_opt(j, "head_dim", c.head_dim);
  get_opt(j, "mlp_hidden", c.mlp_hidden);
  get_opt(j, "vocab_size", c.vocab_size);
  get_opt(j, "max_seq_len", c.max_seq_len);
  get_opt(j, "init_scale", c.init_scale);
  get_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"schedule", c.schedule},
       {"eval_every", c.eval_every},
       {"tau", c.tau},
       {"seed", c.seed},
       {"divergence_factor", c.divergence_factor},
       {"divergence_window", c.divergence_window}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j, {"steps", "batch_size", "lr", "schedule", "eval_every", "tau", "seed", "divergence_factor",
                 "divergence_window"},
             "train config");
  get_opt(j, "steps", c.steps);
  get_opt(j, "batch_size", c.batch_size);
  get_opt(j, "lr", c.lr);
  get_opt(j, "schedule", c.schedule);
  get_opt(j, "eval_every", c.eval_every);
  get_opt(j, "tau", c.tau);
  get_opt(j, "seed", c.seed);
  get_opt(j, "divergence_factor", c.divergence_factor);
  get_opt(j, "divergence_window", c.divergence_window);
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.loss_curve) curve.push_back({p.step, p.loss});
  j = {{"corpus", r.corpus},
       {"model", r.model},
       {"train", r.train},
       {"initial_loss", r.initial_loss},
       {"final_train_loss", r.final_train_loss},
       {"heldout_ce", r.heldout_ce},
       {"bayes_heldout_ce", r.bayes_heldout_ce},
       {"control_ce", r.control_ce},
       {"bayes_control_ce", r.bayes_control_ce},
       {"loss_curve", curve},
       {"checkpoint_path", r.checkpoint_path},
       {"wall_clock_seconds", r.wall_clock_seconds},
       {"converged", r.converged},
       {"diverged", r.diverged},
       {"diagnostic", r.diagnostic}};
}

void from_json(const nlohmann::json& j, RunRecord& r) {
  r.corpus = j.at("corpus").get<CorpusConfig>();
  r.model = j.at("model").get<ModelConfig>();
  r.train = j.at("train").get<TrainConfig>();
  j.at("initial_loss").get_to(r.initial_loss);
  j.at("final_train_loss").get_to(r.final_train_loss);
  j.at("heldout_ce").get_to(r.heldout_ce);
  j.at("bayes_heldout_ce").get_to(r.bayes_heldout_ce);
  j.at("control_ce").get_to(r.control_ce);
  j.at("bayes_control_ce").get_to(r.bayes_control_ce);
  r.loss_curve.clear();
  for (const auto& p : j.at("loss_curve")) r.loss_curve.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
  j.at("checkpoint_path").get_to(r.checkpoint_path);
  j.at("wall_clock_seconds").get_to(r.wall_clock_seconds);
  j.at("converged").get_to(r.converged);
  j.at("diverged").get_to(r.diverged);
  j.at("diagnostic").get_to(r.diagnostic);
}

}  // namespace entlab
