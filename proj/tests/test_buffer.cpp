#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "geom/buffer.hpp"
#include "geom/errors.hpp"
#include "support/temp_dir.hpp"

using namespace geom;

namespace {

GraphDataset sbm(std::uint64_t seed, std::size_t per_class = 30, double p_in = 0.3,
                 double p_out = 0.03) {
  SbmConfig cfg;
  cfg.nodes_per_class = per_class;
  cfg.p_in = p_in;
  cfg.p_out = p_out;
  cfg.feature_dim = 8;
  cfg.seed = seed;
  return generate_sbm(cfg);
}

BufferConfig small_config() {
  BufferConfig cfg;
  cfg.num_experts = 2;
  cfg.hidden_dim = 8;
  cfg.pacing.zeta = 6;
  cfg.pacing.extra_epochs = 4;
  cfg.epochs = 10;
  cfg.lr = 0.3;
  cfg.patience = 0;
  cfg.seed = 5;
  return cfg;
}

bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("lambda = 1 reproduces plain full-set training bit-exactly") {
  const auto g = sbm(1);
  auto cfg = small_config();
  cfg.pacing.lambda0 = 1.0;
  const auto traj = train_expert(g, cfg, 0);
  const auto plain = plain_training_losses(g, cfg, 0, cfg.planned_epochs());
  REQUIRE(traj.meta.train_loss.size() == plain.size());
  for (std::size_t t = 0; t < plain.size(); ++t) {
    CHECK(std::memcmp(&traj.meta.train_loss[t], &plain[t], sizeof(double)) == 0);
  }
}

TEST_CASE("epoch 0 trains on exactly the easiest ceil(lambda * |train|) nodes") {
  const auto g = sbm(2);
  auto cfg = small_config();
  cfg.pacing.lambda0 = 0.3;
  const auto traj = train_expert(g, cfg, 0);
  const auto profile = difficulty_scores(g);
  const auto n = profile.order.size();
  const auto want = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(n) - 1e-9));
  const std::vector<std::size_t> easiest(profile.order.begin(), profile.order.begin() + static_cast<std::ptrdiff_t>(want));
  const Matrix targets = one_hot_rows(g.num_nodes(), g.num_classes(), g.labels(), easiest);
  const auto adj = normalize_adjacency(g);
  const auto direct = loss_and_grad(traj.spec, traj.snapshots[0], g.features(), &adj, targets,
                                    static_cast<double>(want));
  CHECK(traj.meta.train_loss[0] == direct.loss);
  // One SGD step from the init lands on snapshot 1.
  CHECK(bit_equal(traj.snapshots[1], Vector(traj.snapshots[0] - cfg.lr * direct.grad)));
}

TEST_CASE("trajectory shape, determinism and movement") {
  const auto g = sbm(3);
  auto cfg = small_config();
  cfg.snapshot_interval = 2;
  const auto a = train_expert(g, cfg, 1);
  const auto b = train_expert(g, cfg, 1);
  const auto other = train_expert(g, cfg, 0);
  CHECK(a.length() == 1 + 10 / 2);
  CHECK(a.meta.val_accuracy.size() == a.length());
  REQUIRE(a.length() == b.length());
  for (std::size_t k = 0; k < a.length(); ++k) CHECK(bit_equal(a.snapshots[k], b.snapshots[k]));
  CHECK_FALSE(bit_equal(a.snapshots[0], other.snapshots[0]));
  for (std::size_t k = 1; k < a.length(); ++k) {
    CHECK((a.snapshots[k] - a.snapshots[k - 1]).norm() > 0.0);
  }
}

TEST_CASE("parallel pool matches sequential training") {
  const auto g = sbm(4);
  auto cfg = small_config();
  cfg.num_experts = 3;
  const auto seq = train_experts(g, cfg, WorkerPool(1));
  const auto par = train_experts(g, cfg, WorkerPool(3));
  REQUIRE(seq.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(trajectory_hash(seq[e]) == trajectory_hash(par[e]));
    CHECK(seq[e].meta.expert_id == e);
  }
}

TEST_CASE("worker pool rethrows the first failure") {
  WorkerPool pool(2);
  std::vector<int> done(6, 0);
  CHECK_THROWS_WITH_AS(pool.for_each(6,
                                     [&](std::size_t i) {
                                       if (i == 2 || i == 4) throw TrainingError("task " + std::to_string(i));
                                       done[i] = 1;
                                     }),
                       "task 2", TrainingError);
  CHECK(done == std::vector<int>{1, 1, 0, 1, 0, 1});
}

TEST_CASE("patience stops the full-set phase early") {
  const auto g = sbm(5);
  auto cfg = small_config();
  cfg.pacing.extra_epochs = 200;
  cfg.epochs = 300;
  cfg.lr = 1e-9;  // accuracy never moves
  cfg.patience = 3;
  const auto traj = train_expert(g, cfg, 0);
  // Best is set at epoch zeta, then 3 stale epochs.
  CHECK(traj.meta.train_loss.size() == static_cast<std::size_t>(cfg.pacing.zeta + 3));
}

TEST_CASE("desk-scale sbm expert reaches 0.85 validation accuracy") {
  SbmConfig scfg;  // 3 x 200, p_in 0.1, p_out 0.01, d 32
  scfg.seed = 11;
  const auto g = generate_sbm(scfg);
  BufferConfig cfg;
  cfg.num_experts = 1;
  cfg.seed = 11;
  const auto traj = train_expert(g, cfg, 0);
  CHECK(traj.meta.val_accuracy.back() >= 0.85);
}

TEST_CASE("divergence is a training error naming the epoch") {
  const auto g = sbm(6);
  auto cfg = small_config();
  cfg.lr = 1e306;
  CHECK_THROWS_AS(train_expert(g, cfg, 0), TrainingError);
  try {
    train_expert(g, cfg, 0);
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("buffer config validation") {
  auto cfg = small_config();
  cfg.epochs = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.num_experts = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.snapshot_interval = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("identical nodes give equal easy and difficult gradient means") {
  const std::size_t n = 8;
  std::vector<Split> splits(n, Split::kTrain);
  GraphDataset g(Matrix::Constant(n, 3, 0.5), adjacency_from_edges(n, {}), std::vector<int>(n, 1),
                 splits, 2);
  ExpertTrajectory traj;
  traj.spec = ModelSpec{Arch::kGcn2, 3, 4, 2, 9};
  traj.snapshots = {init_params(traj.spec), init_params(traj.spec) * 0.5};
  const auto series = grad_norm_analysis(g, traj, 0.25);
  REQUIRE(series.easy.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) CHECK(series.easy[k] == doctest::Approx(series.difficult[k]).epsilon(1e-12));
}

TEST_CASE("group means are arithmetic means of per-node norms") {
  const auto g = sbm(7, 12, 0.3, 0.2);
  auto cfg = small_config();
  const auto traj = train_expert(g, cfg, 0);
  const auto series = grad_norm_analysis(g, traj, 0.4);
  const auto profile = difficulty_scores(g);
  const auto train = g.train_indices();
  const auto adj = normalize_adjacency(g);
  const std::size_t n = train.size();
  const auto easy_count = static_cast<std::size_t>(std::llround(0.4 * static_cast<double>(n)));
  for (std::size_t k = 0; k < traj.length(); k += 3) {
    // Brute force: one tape and one backward pass per node.
    std::vector<double> norm_of(g.num_nodes(), 0.0);
    for (auto i : train) {
      Matrix t = Matrix::Zero(static_cast<Eigen::Index>(g.num_nodes()), g.num_classes());
      t(static_cast<Eigen::Index>(i), g.labels()[i]) = 1.0;
      norm_of[i] = loss_and_grad(traj.spec, traj.snapshots[k], g.features(), &adj, t, 1.0).grad.norm();
    }
    double easy = 0.0, hard = 0.0;
    for (std::size_t r = 0; r < n; ++r) (r < easy_count ? easy : hard) += norm_of[profile.order[r]];
    CHECK(series.easy[k] == doctest::Approx(easy / static_cast<double>(easy_count)).epsilon(1e-12));
    CHECK(series.difficult[k] == doctest::Approx(hard / static_cast<double>(n - easy_count)).epsilon(1e-12));
  }
}

TEST_CASE("difficult nodes carry larger gradients on a low-homophily graph") {
  SbmConfig scfg;
  scfg.nodes_per_class = 100;
  scfg.p_in = 0.06;
  scfg.p_out = 0.03;
  scfg.seed = 13;
  const auto g = generate_sbm(scfg);
  BufferConfig cfg;
  cfg.num_experts = 1;
  cfg.hidden_dim = 16;
  cfg.pacing.zeta = 30;
  cfg.pacing.extra_epochs = 30;
  cfg.epochs = 60;
  cfg.snapshot_interval = 60;
  cfg.patience = 0;
  const auto traj = train_expert(g, cfg, 0);
  const auto series = grad_norm_analysis(g, traj, 0.5);
  CHECK(series.difficult.back() > series.easy.back());
}

TEST_CASE("trajectory save and load round-trip bit-exactly") {
  geom::testing::TempDir dir("traj");
  const auto g = sbm(8);
  const auto traj = train_expert(g, small_config(), 1);
  const auto path = dir / "e1.traj";
  save_trajectory(traj, path);
  CHECK(std::filesystem::exists(trajectory_meta_path(path)));
  const auto back = load_trajectory(path);
  CHECK(back.spec.same_shape(traj.spec));
  CHECK(back.spec.seed == traj.spec.seed);
  REQUIRE(back.length() == traj.length());
  for (std::size_t k = 0; k < traj.length(); ++k) CHECK(bit_equal(back.snapshots[k], traj.snapshots[k]));
  CHECK(back.meta.val_accuracy == traj.meta.val_accuracy);
  CHECK(back.meta.train_loss == traj.meta.train_loss);
  CHECK(back.meta.pacing.lambda0 == traj.meta.pacing.lambda0);
  CHECK(back.meta.expert_id == 1);

  // Header snapshot count and P describe the payload exactly.
  const auto bytes = read_bytes(path);
  std::uint32_t count = 0;
  std::uint64_t p = 0;
  std::memcpy(&count, bytes.data() + 28, 4);
  std::memcpy(&p, bytes.data() + 32, 8);
  CHECK(count == traj.length());
  CHECK(p == parameter_count(traj.spec));
  CHECK(bytes.size() == 40 + count * p * 8);

  const auto again = dir / "again.traj";
  save_trajectory(back, again);
  CHECK(read_bytes(again) == bytes);
}

TEST_CASE("corrupted trajectory files are format errors") {
  geom::testing::TempDir dir("trajbad");
  const auto g = sbm(9);
  const auto path = dir / "e.traj";
  save_trajectory(train_expert(g, small_config(), 0), path);
  std::filesystem::remove(trajectory_meta_path(path));
  const auto bytes = read_bytes(path);
  const auto bad = dir / "bad.traj";

  write_bytes(bad, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  write_bytes(bad, bytes.substr(0, 20));
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  write_bytes(bad, bytes + "x");
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(bad, magic);
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  auto version = bytes;
  version[8] = 2;
  write_bytes(bad, version);
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  auto arch = bytes;
  arch[12] = 7;
  write_bytes(bad, arch);
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  CHECK_THROWS_AS(load_trajectory(dir / "missing.traj"), LoadError);

  // A broken sidecar is reported too.
  write_bytes(bad, bytes);
  write_bytes(trajectory_meta_path(bad), "{\"lr\": ");
  CHECK_THROWS_AS(load_trajectory(bad), FormatError);
  // Without a sidecar the snapshots still load.
  std::filesystem::remove(trajectory_meta_path(bad));
  CHECK(load_trajectory(bad).length() == 11);
}
