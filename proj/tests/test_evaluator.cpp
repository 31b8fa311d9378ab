#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "geom/csv.hpp"
#include "geom/errors.hpp"
#include "geom/evaluator.hpp"
#include "support/temp_dir.hpp"

using namespace geom;

namespace {

GraphDataset sbm(std::uint64_t seed, std::size_t per_class = 30) {
  SbmConfig cfg;
  cfg.nodes_per_class = per_class;
  cfg.p_in = 0.3;
  cfg.p_out = 0.03;
  cfg.feature_dim = 6;
  cfg.seed = seed;
  return generate_sbm(cfg);
}

EvalProtocol quick_protocol() {
  EvalProtocol proto;
  proto.train_epochs = 40;
  proto.eval_interval = 10;
  proto.lr = 0.3;
  proto.repeats = 3;
  proto.seed = 1;
  return proto;
}

Matrix blobs(std::uint64_t seed, std::size_t per, double separation, double spread, std::vector<int>& labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Matrix x(static_cast<Eigen::Index>(2 * per), 2);
  labels.clear();
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    x(static_cast<Eigen::Index>(i), 0) = c * separation + noise(rng);
    x(static_cast<Eigen::Index>(i), 1) = noise(rng);
    labels.push_back(c);
  }
  return x;
}

}  // namespace

TEST_CASE("condensed set equal to the training split reproduces plain mlp training") {
  const auto g = sbm(1);
  const auto train = g.train_indices();
  CondensedSet s;
  s.num_classes = g.num_classes();
  s.inner_lr = 0.3;
  s.features.resize(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(g.feature_dim()));
  for (std::size_t r = 0; r < train.size(); ++r) {
    s.features.row(static_cast<Eigen::Index>(r)) = g.features().row(static_cast<Eigen::Index>(train[r]));
    s.hard_labels.push_back(g.labels()[train[r]]);
  }
  const ModelSpec spec{Arch::kMlp2, g.feature_dim(), 16, 3, 0};
  const auto proto = quick_protocol();
  const auto a = evaluate_condensed(s, g, spec, proto);
  const auto b = evaluate_full(g, spec, proto);
  CHECK(std::abs(a.mean - b.mean) <= 0.005);
  for (std::size_t r = 0; r < proto.repeats; ++r) {
    CHECK(a.repeats[r].best_epoch == b.repeats[r].best_epoch);
  }
}

TEST_CASE("constant predictor on a single-class test set scores 0 or 1") {
  const std::size_t n = 12;
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0};
  std::vector<Split> splits{Split::kTrain, Split::kTrain, Split::kTrain, Split::kTrain, Split::kVal,
                            Split::kVal,   Split::kTest,  Split::kTest,  Split::kTest,  Split::kTest,
                            Split::kTest,  Split::kTest};
  GraphDataset g(Matrix::Constant(n, 2, 0.7), adjacency_from_edges(n, {}), labels, splits, 2);
  const auto s = coreset(g, 0.5, CoresetMethod::kRandom, 0, 0.2);
  const ModelSpec spec{Arch::kGcn2, 2, 4, 2, 0};
  const auto report = evaluate_condensed(s, g, spec, quick_protocol());
  for (const auto& r : report.repeats) CHECK((r.test_accuracy == 0.0 || r.test_accuracy == 1.0));
}

TEST_CASE("evaluation is deterministic and ignores test labels") {
  const auto g = sbm(2);
  const auto s = init_condensed(g, 0.3, 4, true, 0.3);
  const ModelSpec spec{Arch::kGcn2, g.feature_dim(), 16, 3, 0};
  auto proto = quick_protocol();
  proto.repeats = 10;
  const auto a = evaluate_condensed(s, g, spec, proto);
  const auto b = evaluate_condensed(s, g, spec, proto, WorkerPool(4));
  CHECK(std::memcmp(&a.std, &b.std, sizeof(double)) == 0);
  CHECK(std::memcmp(&a.mean, &b.mean, sizeof(double)) == 0);

  // Scramble the test labels: checkpoint selection and validation scores must not move.
  auto labels = g.labels();
  for (auto i : g.test_indices()) labels[i] = (labels[i] + 1) % 3;
  GraphDataset scrambled(g.features(), g.adjacency(), labels, g.splits(), 3);
  const auto c = evaluate_condensed(s, scrambled, spec, proto);
  for (std::size_t r = 0; r < proto.repeats; ++r) {
    CHECK(c.repeats[r].best_epoch == a.repeats[r].best_epoch);
    CHECK(c.repeats[r].val_accuracy == a.repeats[r].val_accuracy);
  }
}

TEST_CASE("evaluation contract errors") {
  const auto g = sbm(3);
  auto s = init_condensed(g, 0.3, 4, false, 0.3);
  s.features = Matrix::Zero(s.features.rows(), 5);
  const ModelSpec spec{Arch::kGcn2, g.feature_dim(), 16, 3, 0};
  CHECK_THROWS_AS(evaluate_condensed(s, g, spec, quick_protocol()), ContractError);
  auto proto = quick_protocol();
  proto.eval_interval = 100;
  CHECK_THROWS_AS(proto.validate(), ConfigError);
}

TEST_CASE("herding and k-center selections") {
  Matrix x(4, 1);
  x << 0, 2, 3, 9;  // mean 3.5
  CHECK(herding_select(x, 1) == std::vector<std::size_t>{2});
  CHECK(kcenter_select(x, 1) == std::vector<std::size_t>{2});

  Matrix line(3, 1);
  line << 0, 1, 10;
  const auto picked = kcenter_select(line, 2);
  CHECK(picked == std::vector<std::size_t>{1, 2});
  // Brute force: greedy's covering radius equals the best over every 2-subset here.
  const auto radius = [&](std::size_t a, std::size_t b) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) {
      r = std::max(r, std::min(std::abs(line(i) - line(static_cast<Eigen::Index>(a))),
                               std::abs(line(i) - line(static_cast<Eigen::Index>(b)))));
    }
    return r;
  };
  const double best = std::min({radius(0, 1), radius(0, 2), radius(1, 2)});
  CHECK(radius(picked[0], picked[1]) == best);

  // Herding's running mean approaches the class mean.
  Matrix pts(6, 2);
  pts << 0, 0, 4, 0, 0, 4, 4, 4, 2, 2, 9, 9;
  const auto h = herding_select(pts, 3);
  const Eigen::RowVectorXd mean = pts.colwise().mean();
  Eigen::RowVectorXd run = Eigen::RowVectorXd::Zero(2);
  double prev = 1e9;
  for (std::size_t k = 0; k < h.size(); ++k) {
    run += pts.row(static_cast<Eigen::Index>(h[k]));
    const double d = (run / static_cast<double>(k + 1) - mean).norm();
    // No other unselected point would have done better at this step.
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      if (std::find(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(k + 1), static_cast<std::size_t>(i)) !=
          h.begin() + static_cast<std::ptrdiff_t>(k + 1)) {
        continue;
      }
      const Eigen::RowVectorXd alt = run - pts.row(static_cast<Eigen::Index>(h[k])) + pts.row(i);
      CHECK((alt / static_cast<double>(k + 1) - mean).norm() >= d);
    }
    prev = d;
  }
  CHECK(prev < (pts.row(5) - mean).norm());
}

TEST_CASE("coresets are subsets of the training rows") {
  const auto g = sbm(4);
  const auto train = g.train_indices();
  for (auto method : {CoresetMethod::kRandom, CoresetMethod::kHerding, CoresetMethod::kKCenter}) {
    const auto s = coreset(g, 0.5, method, 7, 0.2);
    CHECK(s.size() == 9);
    CHECK_FALSE(s.soft_labels);
    for (std::size_t r = 0; r < s.size(); ++r) {
      bool found = false;
      for (auto i : train) {
        found = found || (g.labels()[i] == s.hard_labels[r] &&
                          g.features().row(static_cast<Eigen::Index>(i)) == s.features.row(static_cast<Eigen::Index>(r)));
      }
      CHECK(found);
    }
  }
  const auto a = coreset(g, 0.5, CoresetMethod::kRandom, 3, 0.2);
  const auto b = coreset(g, 0.5, CoresetMethod::kRandom, 3, 0.2);
  CHECK(a.features == b.features);
  CHECK_FALSE(a.features == coreset(g, 0.5, CoresetMethod::kRandom, 4, 0.2).features);
  CHECK_THROWS_AS(coreset(g, 0.01, CoresetMethod::kHerding, 0, 0.2), ConfigError);
  CHECK_THROWS_AS(parse_coreset_method("kmeans"), ConfigError);
}

TEST_CASE("clustering indices") {
  std::vector<int> labels;
  SUBCASE("separated blobs") {
    const Matrix x = blobs(1, 50, 20.0, 0.5, labels);
    const auto s = clustering_metrics(x, labels);
    CHECK(s.silhouette > 0.9);
    CHECK(s.silhouette <= 1.0);
    CHECK(s.davies_bouldin >= 0.0);
    CHECK(s.calinski_harabasz >= 0.0);
  }
  SUBCASE("permuted labels give silhouette near zero") {
    const Matrix x = blobs(2, 100, 3.0, 1.0, labels);
    std::mt19937_64 rng(3);
    std::shuffle(labels.begin(), labels.end(), rng);
    CHECK(std::abs(clustering_metrics(x, labels).silhouette) < 0.1);
  }
  SUBCASE("separation sweep moves CH up and DB down") {
    double ch = -1.0, db = 1e9;
    for (double sep : {1.0, 3.0, 9.0}) {
      const Matrix x = blobs(4, 60, sep, 1.0, labels);
      const auto s = clustering_metrics(x, labels);
      CHECK(s.calinski_harabasz > ch);
      CHECK(s.davies_bouldin < db);
      ch = s.calinski_harabasz;
      db = s.davies_bouldin;
    }
  }
  SUBCASE("duplicating every point") {
    const Matrix x = blobs(5, 20, 2.0, 1.0, labels);
    const auto base = clustering_metrics(x, labels);
    Matrix xx(2 * x.rows(), x.cols());
    xx << x, x;
    std::vector<int> ll = labels;
    ll.insert(ll.end(), labels.begin(), labels.end());
    const auto dup = clustering_metrics(xx, ll);
    // Centroids and mean scatters are unchanged.
    CHECK(dup.davies_bouldin == doctest::Approx(base.davies_bouldin).epsilon(1e-12));
    // CH: both dispersions double, the degrees of freedom do not.
    const double n = static_cast<double>(x.rows());
    CHECK(dup.calinski_harabasz == doctest::Approx(base.calinski_harabasz * (2 * n - 2) / (n - 2)).epsilon(1e-12));
    // Silhouette: each point gains a zero-distance twin, so a_i = 2 S_i / (2 n_c - 1)
    // while b_i is unchanged. Recompute that prediction independently.
    double predicted = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double own = 0.0, other = 0.0;
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        const double d = (x.row(i) - x.row(j)).norm();
        (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)] ? own : other) += d;
      }
      const double a = 2.0 * own / (2.0 * 20 - 1);
      const double b = other / 20.0;
      predicted += (b - a) / std::max(a, b);
    }
    predicted /= n;
    CHECK(dup.silhouette == doctest::Approx(predicted).epsilon(1e-12));
    CHECK(dup.silhouette > base.silhouette);
  }
  SUBCASE("singleton class") {
    Matrix x(3, 1);
    x << 0, 1, 5;
    CHECK_THROWS_AS(clustering_metrics(x, {0, 0, 7}), MetricError);
    CHECK_THROWS_WITH(clustering_metrics(x, {0, 0, 7}), doctest::Contains("class 7"));
  }
}

TEST_CASE("error decomposition on the linear regression toy") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto toy = LinearRegressionToy::random(seed);
    const auto expert = toy.expert(25);
    const auto run = [&](const ParameterVector& w, int steps) { return toy.student(w, steps); };
    const auto d = error_decomposition(expert, run, 5, 3, 5, ParameterVector::Zero(1));
    CHECK(d.max_residual < 1e-9);
    CHECK(d.epsilon.size() == 6);
    CHECK(d.initialization[0].norm() == 0.0);  // eps_0 = 0
    const auto shifted = error_decomposition(expert, run, 5, 3, 5, ParameterVector::Constant(1, 0.4));
    CHECK(shifted.max_residual < 1e-9);
  }
}

TEST_CASE("a student that replays the expert has no error") {
  auto toy = LinearRegressionToy::random(3);
  toy.xs = toy.xt;
  toy.ys = toy.yt;
  toy.lr_s = toy.lr_t;
  const auto expert = toy.expert(20);
  const auto d = error_decomposition(expert, [&](const ParameterVector& w, int s) { return toy.student(w, s); }, 4,
                                     4, 5, ParameterVector::Zero(1));
  for (const auto& e : d.epsilon) CHECK(std::abs(e(0)) < 1e-12);
}

TEST_CASE("q = 0 telescopes by hand") {
  const auto toy = LinearRegressionToy::random(5);
  const auto expert = toy.expert(12);
  const ParameterVector eps0 = ParameterVector::Constant(1, 0.25);
  const auto d = error_decomposition(expert, [&](const ParameterVector& w, int s) { return toy.student(w, s); }, 3,
                                     0, 4, eps0);
  for (int n = 0; n < 4; ++n) {
    const auto k = static_cast<std::size_t>(n);
    const ParameterVector direct = expert[k * 3] - expert[k * 3 + 3] + d.epsilon[k];
    CHECK(d.epsilon[k + 1](0) == doctest::Approx(direct(0)).epsilon(1e-14));
  }
}

TEST_CASE("error decomposition on a small mlp") {
  // 2 classes, d = 3, hidden = 4; structure is irrelevant for mlp2.
  SbmConfig scfg;
  scfg.nodes_per_class = 20;
  scfg.num_classes = 2;
  scfg.feature_dim = 3;
  scfg.seed = 8;
  const auto g = generate_sbm(scfg);
  BufferConfig cfg;
  cfg.arch = Arch::kMlp2;
  cfg.hidden_dim = 4;
  cfg.pacing.zeta = 10;
  cfg.pacing.extra_epochs = 10;
  cfg.epochs = 20;
  cfg.patience = 0;
  cfg.lr = 0.5;
  const auto traj = train_expert(g, cfg, 0);
  const auto s = init_condensed(g, 0.5, 1, true, 0.5);
  const auto d = error_decomposition(traj, s, 4, 3, 0.5, 5);
  CHECK(d.max_residual < 1e-9);
  CHECK(d.matching_sum_norm() > 0.0);
  ParameterVector eps0 = ParameterVector::Constant(traj.snapshots[0].size(), 0.01);
  CHECK(error_decomposition(traj, s, 4, 3, 0.5, 5, eps0).max_residual < 1e-9);

  CHECK_THROWS_AS(error_decomposition(traj, s, 4, 3, 0.5, 6), ConfigError);
  CHECK_THROWS_AS(error_decomposition(traj, s, 4, 3, 0.5, 5, {}, -1.0), AnalyzerError);

  geom::testing::TempDir dir("decomp");
  write_decomposition_csv(d, dir / "d.csv");
  const auto lines = csv::read_lines(dir / "d.csv");
  CHECK(lines.size() == 7);
  CHECK(lines[0] == "stage,eps_norm,init_norm,match_norm,residual");
}

TEST_CASE("coreset and condensed reports share a schema") {
  geom::testing::TempDir dir("reports");
  const auto g = sbm(6);
  const ModelSpec spec{Arch::kGcn2, g.feature_dim(), 8, 3, 0};
  auto proto = quick_protocol();
  const auto a = evaluate_condensed(coreset(g, 0.5, CoresetMethod::kHerding, 0, 0.3), g, spec, proto);
  const auto b = evaluate_condensed(init_condensed(g, 0.5, 0, true, 0.3), g, spec, proto);
  write_report_csv(a, dir / "a.csv");
  write_report_csv(b, dir / "b.csv");
  const auto la = csv::read_lines(dir / "a.csv");
  const auto lb = csv::read_lines(dir / "b.csv");
  CHECK(la.size() == lb.size());
  CHECK(la[0] == lb[0]);
  CHECK(la.size() == proto.repeats + 2);
  write_report_json(a, dir / "a.json");
  CHECK(std::filesystem::exists(dir / "a.json"));
}

TEST_CASE("random coreset equals the condensation starting point for the same seed") {
  const auto g = sbm(9);
  for (std::uint64_t seed : {0u, 5u}) {
    const auto a = coreset(g, 0.5, CoresetMethod::kRandom, seed, 0.2);
    const auto b = init_condensed(g, 0.5, seed, false, 0.2);
    CHECK(a.features == b.features);
    CHECK(a.hard_labels == b.hard_labels);
  }
}
