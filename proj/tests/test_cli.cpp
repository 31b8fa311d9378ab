#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "geom/csv.hpp"
#include "geom/errors.hpp"
#include "run_config.hpp"
#include "support/temp_dir.hpp"

using namespace geom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

const std::vector<std::string> kTiny = {
    "--set", "sbm.nodes_per_class=20", "--set", "sbm.feature_dim=6",    "--set", "buffer.num_experts=1",
    "--set", "buffer.hidden_dim=8",    "--set", "buffer.zeta=10",       "--set", "buffer.extra_epochs=20",
    "--set", "buffer.epochs=30",       "--set", "condense.U_max=12",    "--set", "condense.ratio=0.25",
    "--set", "condense.q=4",           "--set", "condense.p=3",         "--set", "eval.train_epochs=30",
    "--set", "eval.eval_interval=10",  "--set", "eval.repeats=2",       "--set", "buffer.patience=0",
};

Outcome geom_run(const fs::path& out, std::vector<std::string> args, bool tiny = true) {
  std::vector<std::string> all{"geom", "--threads", "2", "--out", out.string()};
  if (tiny) all.insert(all.end(), kTiny.begin(), kTiny.end());
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  return {code, o.str(), e.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> rows(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  for (const auto& line : csv::read_lines(p)) out.push_back(csv::split(line));
  return out;
}

}  // namespace

TEST_CASE("config precedence is flag over file over default") {
  geom::testing::TempDir dir("cfg");
  csv::write_text(dir / "run.ini", "[run]\nseed = 5\n\n[buffer]\nlr = 0.05\nhidden_dim = 12\n");
  const auto from_file = cli::load_run_config(dir / "run.ini", {});
  CHECK(from_file.seed == 5);
  CHECK(from_file.buffer.lr == 0.05);
  CHECK(from_file.buffer.epochs == BufferConfig{}.epochs);
  CHECK(from_file.init_lr == 0.05);   // inherits buffer.lr
  CHECK(from_file.eval_hidden == 12);  // inherits buffer.hidden_dim
  const auto flagged = cli::load_run_config(dir / "run.ini", {{"run.seed", "9"}, {"buffer.lr", "0.3"}});
  CHECK(flagged.seed == 9);
  CHECK(flagged.buffer.seed == 9);
  CHECK(flagged.buffer.lr == 0.3);
  CHECK(flagged.buffer.hidden_dim == 12);
}

TEST_CASE("config errors") {
  geom::testing::TempDir dir("cfgerr");
  csv::write_text(dir / "typo.ini", "[buffer]\nlearning_rate = 0.1\n");
  CHECK_THROWS_WITH_AS(cli::load_run_config(dir / "typo.ini", {}), doctest::Contains("buffer.learning_rate"),
                       ConfigError);
  CHECK_THROWS_AS(cli::load_run_config("", {{"buffer.lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(cli::load_run_config("", {{"buffer.num_experts", "-1"}}), ConfigError);
  CHECK_THROWS_AS(cli::load_run_config("", {{"condense.window_mode", "wide"}}), ConfigError);
  CHECK_THROWS_AS(cli::load_run_config(dir / "missing.ini", {}), ConfigError);
  auto cfg = cli::load_run_config("", {{"condense.q", "100"}});
  cfg.trajectories = dir.path();
  CHECK_THROWS_AS(cfg.validate("condense"), ConfigError);
}

TEST_CASE("resolved config round-trips") {
  const auto cfg = cli::load_run_config("", {{"condense.alpha", "0.1"}, {"eval.use_inner_lr", "false"}});
  geom::testing::TempDir dir("cfgrt");
  csv::write_text(dir / "r.ini", cli::to_ini(cfg));
  const auto again = cli::load_run_config(dir / "r.ini", {});
  CHECK(cli::to_ini(again) == cli::to_ini(cfg));
  const auto text = cli::to_ini(cfg);
  for (const auto& key : cli::known_keys()) {
    CHECK(text.find(key.substr(key.find('.') + 1) + " = ") != std::string::npos);
  }
}

TEST_CASE("buffer writes one trajectory per expert, reproducibly") {
  geom::testing::TempDir dir("clibuf");
  const auto a = geom_run(dir / "a", {"buffer"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("final_val_acc") != std::string::npos);
  std::size_t traj = 0, meta = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "buffer")) {
    const auto name = e.path().filename().string();
    traj += name.ends_with(".traj");
    meta += name.ends_with(".meta.json");
  }
  CHECK(traj == 1);
  CHECK(meta == 1);
  CHECK(fs::exists(dir / "a" / "buffer" / "resolved_buffer.ini"));
  REQUIRE(geom_run(dir / "b", {"buffer"}).code == 0);
  CHECK(bytes(dir / "a" / "buffer" / "expert_000.traj") == bytes(dir / "b" / "buffer" / "expert_000.traj"));
}

TEST_CASE("missing dataset path is a usage error naming the path") {
  geom::testing::TempDir dir("climissing");
  const auto r = geom_run(dir.path(), {"--set", "data.source=bundle", "--set", "data.bundle=/no/such/cora", "buffer"});
  CHECK(r.code == 2);
  CHECK(r.err.find("/no/such/cora") != std::string::npos);
}

TEST_CASE("unknown subcommand prints usage and exits 2") {
  const auto r = geom_run("unused", {"transmogrify"}, false);
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  const std::string cmd = std::string(GEOM_BINARY) + " transmogrify > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("condense, eval, coreset and analyze") {
  geom::testing::TempDir dir("clipipe");
  const auto out = dir / "run";
  REQUIRE(geom_run(out, {"--set", "buffer.num_experts=2", "buffer"}).code == 0);
  const auto traj_before = bytes(out / "buffer" / "expert_000.traj");

  SUBCASE("log rows and the loss identity") {
    const auto r = geom_run(out, {"--set", "condense.alpha=0.3", "--set", "condense.lr_y=0.05", "condense",
                                  "--iterations", "10"});
    REQUIRE(r.code == 0);
    const auto log = rows(out / "condense_log.csv");
    REQUIRE(log.size() == 11);
    CHECK(log[0] == std::vector<std::string>{"iteration", "expert", "t", "window_lower", "window", "L_M", "L_E",
                                             "L", "eta"});
    bool kee_seen = false;
    for (std::size_t i = 1; i < log.size(); ++i) {
      const double lm = std::stod(log[i][5]), le = std::stod(log[i][6]), l = std::stod(log[i][7]);
      CHECK(std::abs(l - (lm + 0.3 * le)) <= 1e-9);
      kee_seen = kee_seen || le > 0.0;
    }
    CHECK(kee_seen);
    CHECK(fs::exists(out / "condensed" / "soft_labels.csv"));
    CHECK(bytes(out / "buffer" / "expert_000.traj") == traj_before);  // inputs untouched
  }

  SUBCASE("fixed and expanding windows draw different starts") {
    const auto starts = [&](const char* mode) {
      REQUIRE(geom_run(out, {"condense", "--iterations", "60", "--window-mode", mode}).code == 0);
      std::multiset<int> t;
      const auto log = rows(out / "condense_log.csv");
      for (std::size_t i = 1; i < log.size(); ++i) t.insert(std::stoi(log[i][2]));
      return t;
    };
    const auto fixed = starts("fixed");
    const auto expanding = starts("expanding");
    CHECK(*fixed.rbegin() <= 3);
    CHECK(*expanding.rbegin() > 3);
    CHECK(fixed != expanding);
  }

  SUBCASE("rerun from the resolved snapshot is bit-exact") {
    REQUIRE(geom_run(out, {"condense", "--iterations", "8"}).code == 0);
    const auto features = bytes(out / "condensed" / "features.csv");
    const auto log = bytes(out / "condense_log.csv");
    const auto snapshot = out / "resolved_condense.ini";
    std::vector<std::string> argv{"geom", "--config", snapshot.string(), "condense"};
    std::vector<const char*> raw;
    for (const auto& a : argv) raw.push_back(a.c_str());
    std::ostringstream o, e;
    REQUIRE(cli::run(static_cast<int>(raw.size()), raw.data(), o, e) == 0);
    CHECK(bytes(out / "condensed" / "features.csv") == features);
    CHECK(bytes(out / "condense_log.csv") == log);
  }

  SUBCASE("eval and coreset reports share a schema") {
    REQUIRE(geom_run(out, {"condense", "--iterations", "5"}).code == 0);
    REQUIRE(geom_run(out, {"eval"}).code == 0);
    REQUIRE(geom_run(out, {"coreset", "--method", "kcenter"}).code == 0);
    const auto a = rows(out / "eval_condensed.csv");
    const auto b = rows(out / "eval_coreset_kcenter.csv");
    const auto c = rows(out / "eval_full.csv");
    CHECK(a[0] == b[0]);
    CHECK(a[0] == c[0]);
    CHECK(a.size() == b.size());
    CHECK(fs::exists(out / "coreset_kcenter" / "features.csv"));
  }

  SUBCASE("analyze a trained expert against the condensed set") {
    REQUIRE(geom_run(out, {"condense", "--iterations", "5"}).code == 0);
    const auto r = geom_run(out, {"--set", "analyze.eps0=0.01", "analyze"});
    CHECK(r.code == 0);
    CHECK(rows(out / "decomposition.csv").size() == 7);
    const auto shortfall = geom_run(out, {"--set", "analyze.stages=50", "analyze"});
    CHECK(shortfall.code == 2);
  }
}

TEST_CASE("analyze on the linear regression toy exits 0") {
  geom::testing::TempDir dir("clitoy");
  const auto r = geom_run(dir.path(), {"analyze", "--toy", "linreg"}, false);
  CHECK(r.code == 0);
  CHECK(r.out.find("identity holds") != std::string::npos);
}

TEST_CASE("sbm-gen writes a loadable bundle") {
  geom::testing::TempDir dir("clisbm");
  REQUIRE(geom_run(dir / "g", {"sbm-gen"}).code == 0);
  const auto g = load_graph(dir / "g");
  CHECK(g.num_nodes() == 60);
  CHECK(g.feature_dim() == 6);
}
