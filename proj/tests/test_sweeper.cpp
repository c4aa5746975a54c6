#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "entlab/io.hpp"
#include "entlab/sweeper.hpp"

using namespace entlab;
namespace fs = std::filesystem;

namespace {

SweepConfig tiny(const std::string& dir) {
  SweepConfig c;
  c.grid = {0.0, 1.0};
  c.seeds = 2;
  c.master_seed = 11;
  c.train.steps = 200;
  c.train.eval_every = 100;
  c.gen_samples = 50;
  c.direction_probe_copies = 20;
  c.bootstrap_n = 200;
  c.probe.iterations = 300;
  c.out_dir = (fs::temp_directory_path() / dir).string();
  fs::remove_all(c.out_dir);
  return c;
}

std::size_t lines(const fs::path& p) {
  std::ifstream f(p);
  std::size_t n = 0;
  std::string s;
  while (std::getline(f, s)) ++n;
  return n;
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST_CASE("config validation") {
  SweepConfig c;
  c.grid = {0.1, 0.05};
  CHECK_THROWS_AS(c.validate(), Error);
  c.grid = {0.0, 1.5};
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.seeds = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  CHECK(c.num_cells() == 80);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("cell seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (int p = 0; p < 8; ++p)
    for (int r = 0; r < 10; ++r) seen.insert(cell_seed(0, p, r));
  CHECK(seen.size() == 80);
  CHECK(cell_seed(0, 3, 4) == cell_seed(0, 3, 4));
  CHECK(cell_seed(0, 3, 4) != cell_seed(1, 3, 4));
}

TEST_CASE("sweep config JSON round trip") {
  SweepConfig c;
  c.grid = {0, 0.5};
  c.master_seed = 99;
  c.train.steps = 7;
  c.probe.l2 = 0.01;
  const nlohmann::json j = c;
  const SweepConfig back = j.get<SweepConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS_AS(nlohmann::json({{"gird", {0}}}).get<SweepConfig>(), Error);
}

TEST_CASE("tiny sweep: cell arithmetic, resume, stable aggregation") {
  const SweepConfig cfg = tiny("entlab_test_sweep");
  const fs::path out(cfg.out_dir);
  const SweepReport r = run_sweep(cfg);
  REQUIRE(r.cells.size() == 4);
  CHECK(r.failed_cells() == 0);
  CHECK(r.cells_trained == 4);
  for (const auto& c : r.cells) CHECK(fs::exists(cell_dir(out, c.p_index, c.replicate) / "model.bin"));

  // p=0 cells carry 8 control rows, p=1 cells 12 rows (4 targets).
  CHECK(lines(out / "entanglement.csv") == 1 + 2 * 8 + 2 * 12);
  std::ifstream ent(out / "entanglement.csv");
  std::string line;
  std::getline(ent, line);
  int targets_p1 = 0;
  while (std::getline(ent, line)) {
    std::vector<std::string> col;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) col.push_back(c);
    REQUIRE(col.size() == 8);
    if (col[0] == "0") CHECK(col[6] == "0");
    if (col[0] == "1" && col[6] == "1") ++targets_p1;
  }
  CHECK(targets_p1 == 8);
  const std::size_t per_cell_steer = 1 + cfg.strengths.size();
  CHECK(lines(out / "steer_eval.csv") == 1 + 4 * per_cell_steer);
  CHECK(lines(out / "head_acc_all.csv") == 1 + 4 * 8);
  CHECK(lines(out / "curves.csv") == 1 + 2);
  CHECK(r.has_head_comparison);
  for (const auto& f : r.files) CHECK(fs::exists(out / f));

  std::map<std::string, std::string> before;
  for (const auto& f : r.files) before[f] = slurp(out / f);

  // Resume: nothing retrains, every aggregate is byte-identical.
  const SweepReport again = run_sweep(cfg);
  CHECK(again.cells_trained == 0);
  for (const auto& f : r.files) CHECK(slurp(out / f) == before[f]);
  const SweepReport re = aggregate_directory(out);
  for (const auto& f : r.files) CHECK(slurp(out / f) == before[f]);
  CHECK(re.cells.size() == 4);

  // A different configuration in the same directory is refused.
  SweepConfig other = cfg;
  other.train.steps = 201;
  CHECK_THROWS_AS(run_sweep(other), Error);
  fs::remove_all(out);
}

TEST_CASE("a cell re-run from scratch is byte-identical") {
  SweepConfig a = tiny("entlab_test_det_a");
  SweepConfig b = tiny("entlab_test_det_b");
  a.grid = b.grid = {0.5};
  a.seeds = b.seeds = 1;
  run_sweep(a);
  run_sweep(b);
  const fs::path ca = cell_dir(a.out_dir, 0, 0), cb = cell_dir(b.out_dir, 0, 0);
  for (const char* f : {"model.bin", "directions.csv", "head_acc.csv", "steer.csv", "run.json", "cell.json"})
    CHECK(slurp(ca / f) == slurp(cb / f));
  for (const char* f : {"entanglement.csv", "steer_eval.csv", "curves.csv", "head_acc_all.csv", "entanglement.svg"})
    CHECK(slurp(fs::path(a.out_dir) / f) == slurp(fs::path(b.out_dir) / f));
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
}

TEST_CASE("a failing cell is recorded and does not stop the sweep") {
  SweepConfig cfg = tiny("entlab_test_fail");
  cfg.grid = {0.5};
  // Occupy one cell's directory path with a regular file.
  const fs::path blocked = cell_dir(cfg.out_dir, 0, 1);
  fs::create_directories(blocked.parent_path());
  std::ofstream(blocked) << "x";
  const SweepReport r = run_sweep(cfg);
  CHECK(r.failed_cells() == 1);
  CHECK(r.cells[0].ok);
  CHECK_FALSE(r.cells[1].ok);
  CHECK_FALSE(r.cells[1].diagnostic.empty());
  const auto manifest = parse_json_file(fs::path(cfg.out_dir) / "manifest.json");
  CHECK(manifest["failed_cells"].size() == 1);
  CHECK(lines(fs::path(cfg.out_dir) / "head_acc_all.csv") == 1 + 8);
  fs::remove_all(cfg.out_dir);
}
