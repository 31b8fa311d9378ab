#include "geom/buffer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <unordered_map>

#include "geom/errors.hpp"

namespace geom {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'G', 'E', 'O', 'M', 'T', 'R', 'A', 'J'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 4 * 3 + 4 + 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

ModelSpec expert_spec(const GraphDataset& g, const BufferConfig& cfg, std::size_t expert_id) {
  ModelSpec spec;
  spec.arch = cfg.arch;
  spec.in_dim = g.feature_dim();
  spec.hidden_dim = cfg.hidden_dim;
  spec.out_dim = static_cast<std::size_t>(g.num_classes());
  spec.seed = expert_seed(cfg.seed, expert_id);
  return spec;
}

void sgd_step(ParameterVector& theta, ParameterVector& velocity, const ParameterVector& grad,
              double lr, double momentum) {
  if (momentum == 0.0) {
    theta -= lr * grad;
    return;
  }
  velocity = momentum * velocity + grad;
  theta -= lr * velocity;
}

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

json meta_to_json(const ExpertTrajectory& traj) {
  const auto& m = traj.meta;
  return json{{"arch", arch_name(traj.spec.arch)},
              {"model_seed", traj.spec.seed},
              {"pacing",
               {{"kind", pacing_kind_name(m.pacing.kind)},
                {"lambda0", m.pacing.lambda0},
                {"zeta", m.pacing.zeta},
                {"extra_epochs", m.pacing.extra_epochs}}},
              {"lr", m.lr},
              {"momentum", m.momentum},
              {"snapshot_interval", m.snapshot_interval},
              {"seed", m.seed},
              {"expert_id", m.expert_id},
              {"val_accuracy", m.val_accuracy},
              {"train_loss", m.train_loss}};
}

}  // namespace

void BufferConfig::validate() const {
  if (num_experts < 1) throw ConfigError("buffer: num_experts must be >= 1");
  if (hidden_dim < 1) throw ConfigError("buffer: hidden_dim must be >= 1");
  pacing.validate();
  if (epochs < planned_epochs()) {
    throw ConfigError("buffer: epochs (" + std::to_string(epochs) + ") must be >= zeta + extra_epochs (" +
                      std::to_string(planned_epochs()) + ")");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("buffer: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("buffer: momentum must be in [0, 1)");
  if (snapshot_interval < 1 || snapshot_interval > planned_epochs()) {
    throw ConfigError("buffer: snapshot_interval must be in [1, zeta + extra_epochs]");
  }
  if (patience < 0) throw ConfigError("buffer: patience must be >= 0");
}

void ExpertTrajectory::validate() const {
  if (snapshots.size() < 2) throw ContractError("trajectory: needs at least 2 snapshots");
  const auto p = static_cast<Eigen::Index>(parameter_count(spec));
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    if (snapshots[k].size() != p) {
      throw ContractError("trajectory: snapshot " + std::to_string(k) + " has " +
                          std::to_string(snapshots[k].size()) + " parameters, expected " +
                          std::to_string(p));
    }
  }
}

std::uint64_t expert_seed(std::uint64_t seed, std::size_t expert_id) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(expert_id) + 1));
}

ExpertTrajectory train_expert(const GraphDataset& g, const BufferConfig& cfg, std::size_t expert_id) {
  cfg.validate();
  ExpertTrajectory traj;
  traj.spec = expert_spec(g, cfg, expert_id);
  traj.meta.pacing = cfg.pacing;
  traj.meta.lr = cfg.lr;
  traj.meta.momentum = cfg.momentum;
  traj.meta.snapshot_interval = cfg.snapshot_interval;
  traj.meta.seed = cfg.seed;
  traj.meta.expert_id = expert_id;

  const auto profile = difficulty_scores(g);
  const auto adj = normalize_adjacency(g);
  const auto val = g.val_indices();
  const auto val_accuracy = [&](const ParameterVector& theta) {
    return accuracy(predict(traj.spec, theta, g.features(), &adj), g.labels(), val);
  };

  ParameterVector theta = init_params(traj.spec);
  ParameterVector velocity = ParameterVector::Zero(theta.size());
  traj.snapshots.push_back(theta);
  traj.meta.val_accuracy.push_back(val_accuracy(theta));

  const int zeta = cfg.pacing.zeta;
  double best = -1.0;
  int stale = 0;
  std::size_t previous_size = 0;
  for (int t = 0; t < cfg.planned_epochs(); ++t) {
    const auto subset = subset_at(profile, cfg.pacing, t);
    if (subset.size() < previous_size) throw ContractError("train_expert: curriculum subset shrank");
    previous_size = subset.size();
    const Matrix targets = one_hot_rows(g.num_nodes(), g.num_classes(), g.labels(), subset);
    const auto lg = loss_and_grad(traj.spec, theta, g.features(), &adj, targets,
                                  static_cast<double>(subset.size()));
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      throw TrainingError("expert " + std::to_string(expert_id) + " diverged at epoch " +
                          std::to_string(t) + " (loss " + std::to_string(lg.loss) + ")");
    }
    traj.meta.train_loss.push_back(lg.loss);
    sgd_step(theta, velocity, lg.grad, cfg.lr, cfg.momentum);

    const bool snapshot = (t + 1) % cfg.snapshot_interval == 0;
    const bool tracking = cfg.patience > 0 && t + 1 >= zeta;
    double acc = 0.0;
    if (snapshot || tracking) acc = val_accuracy(theta);
    if (snapshot) {
      traj.snapshots.push_back(theta);
      traj.meta.val_accuracy.push_back(acc);
    }
    if (tracking) {
      if (acc > best) {
        best = acc;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  if (traj.snapshots.size() < 2) {
    throw TrainingError("expert " + std::to_string(expert_id) + " stopped before a second snapshot");
  }
  return traj;
}

std::vector<ExpertTrajectory> train_experts(const GraphDataset& g, const BufferConfig& cfg,
                                            const WorkerPool& pool) {
  cfg.validate();
  std::vector<ExpertTrajectory> out(cfg.num_experts);
  pool.for_each(cfg.num_experts, [&](std::size_t i) { out[i] = train_expert(g, cfg, i); });
  return out;
}

std::vector<double> plain_training_losses(const GraphDataset& g, const BufferConfig& cfg,
                                          std::size_t expert_id, int epochs) {
  const auto spec = expert_spec(g, cfg, expert_id);
  const auto adj = normalize_adjacency(g);
  const auto train = g.train_indices();
  const Matrix targets = one_hot_rows(g.num_nodes(), g.num_classes(), g.labels(), train);
  ParameterVector theta = init_params(spec);
  ParameterVector velocity = ParameterVector::Zero(theta.size());
  std::vector<double> losses;
  for (int t = 0; t < epochs; ++t) {
    const auto lg = loss_and_grad(spec, theta, g.features(), &adj, targets,
                                  static_cast<double>(train.size()));
    losses.push_back(lg.loss);
    sgd_step(theta, velocity, lg.grad, cfg.lr, cfg.momentum);
  }
  return losses;
}

std::vector<double> node_grad_norms(const GraphDataset& g, const NormalizedAdjacency& adj,
                                    const ModelSpec& spec, const ParameterVector& theta) {
  const auto train = g.train_indices();
  ad::Tape tape;
  ad::Var th = tape.variable(theta);
  ad::Var logp = ad::row_log_softmax(forward(spec, th, tape.constant(g.features()), &adj));
  std::vector<double> norms;
  norms.reserve(train.size());
  Matrix pick = Matrix::Zero(logp.rows(), logp.cols());
  for (auto i : train) {
    const auto r = static_cast<Eigen::Index>(i);
    pick(r, g.labels()[i]) = 1.0;
    ad::Var loss = ad::scale(ad::sum(ad::mul(logp, tape.constant(pick))), -1.0);
    pick(r, g.labels()[i]) = 0.0;
    norms.push_back(tape.grad(loss, std::span<const ad::Var>(&th, 1))[0].value().norm());
  }
  return norms;
}

GradNormSeries grad_norm_analysis(const GraphDataset& g, const ExpertTrajectory& traj,
                                  double easy_fraction) {
  if (!(easy_fraction > 0.0 && easy_fraction < 1.0)) {
    throw ConfigError("grad_norm_analysis: easy_fraction must be in (0, 1)");
  }
  traj.validate();
  const auto profile = difficulty_scores(g);
  const std::size_t n = profile.order.size();
  if (n < 2) throw ContractError("grad_norm_analysis: needs at least 2 training nodes");
  const auto easy_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(easy_fraction * static_cast<double>(n))), 1, n - 1);

  const auto train = g.train_indices();
  std::unordered_map<std::size_t, std::size_t> position;
  for (std::size_t k = 0; k < train.size(); ++k) position[train[k]] = k;

  const auto adj = normalize_adjacency(g);
  GradNormSeries out;
  for (const auto& theta : traj.snapshots) {
    const auto norms = node_grad_norms(g, adj, traj.spec, theta);
    double easy = 0.0;
    double hard = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = norms[position.at(profile.order[k])];
      (k < easy_count ? easy : hard) += v;
    }
    out.easy.push_back(easy / static_cast<double>(easy_count));
    out.difficult.push_back(hard / static_cast<double>(n - easy_count));
  }
  return out;
}

std::filesystem::path trajectory_meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

void save_trajectory(const ExpertTrajectory& traj, const std::filesystem::path& path) {
  traj.validate();
  const std::uint64_t p = parameter_count(traj.spec);
  std::string bytes(kMagic, sizeof(kMagic));
  put<std::uint32_t>(bytes, kVersion);
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(traj.spec.arch));
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(traj.spec.in_dim));
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(traj.spec.hidden_dim));
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(traj.spec.out_dim));
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(traj.snapshots.size()));
  put<std::uint64_t>(bytes, p);
  bytes.reserve(bytes.size() + traj.snapshots.size() * p * 8);
  for (const auto& s : traj.snapshots) {
    for (Eigen::Index i = 0; i < s.size(); ++i) put<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(s(i)));
  }

  // Write to a sibling temp file first so readers never see half a file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
  std::ofstream meta(trajectory_meta_path(path), std::ios::trunc);
  meta << meta_to_json(traj).dump(2) << '\n';
  if (!meta) throw Error("cannot write " + trajectory_meta_path(path).string());
}

ExpertTrajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open trajectory file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < kHeaderBytes) throw fail("truncated header (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw fail("bad magic, not a GEOMTRAJ file");
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw fail("unsupported format version " + std::to_string(version));
  const auto arch = get<std::uint32_t>(bytes, pos);
  if (arch > 2) throw fail("unknown architecture id " + std::to_string(arch));

  ExpertTrajectory traj;
  traj.spec.arch = static_cast<Arch>(arch);
  traj.spec.in_dim = get<std::uint32_t>(bytes, pos);
  traj.spec.hidden_dim = get<std::uint32_t>(bytes, pos);
  traj.spec.out_dim = get<std::uint32_t>(bytes, pos);
  const auto count = get<std::uint32_t>(bytes, pos);
  const auto p = get<std::uint64_t>(bytes, pos);
  if (traj.spec.in_dim == 0 || traj.spec.hidden_dim == 0 || traj.spec.out_dim == 0) {
    throw fail("zero layer width in header");
  }
  if (p != parameter_count(traj.spec)) {
    throw fail("header P=" + std::to_string(p) + " does not match " + traj.spec.describe());
  }
  if (count < 2) throw fail("snapshot count " + std::to_string(count) + " < 2");
  const std::uint64_t expected = kHeaderBytes + static_cast<std::uint64_t>(count) * p * 8;
  if (bytes.size() != expected) {
    throw fail("payload holds " + std::to_string(bytes.size()) + " bytes, header implies " +
               std::to_string(expected) + (bytes.size() < expected ? " (truncated)" : " (trailing data)"));
  }
  traj.snapshots.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    ParameterVector s(static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = std::bit_cast<double>(get<std::uint64_t>(bytes, pos));
    traj.snapshots.push_back(std::move(s));
  }

  const auto meta_path = trajectory_meta_path(path);
  if (std::filesystem::exists(meta_path)) {
    try {
      std::ifstream mf(meta_path);
      const json j = json::parse(mf);
      auto& m = traj.meta;
      traj.spec.seed = j.at("model_seed").get<std::uint64_t>();
      const auto& pc = j.at("pacing");
      m.pacing.kind = parse_pacing_kind(pc.at("kind").get<std::string>());
      m.pacing.lambda0 = pc.at("lambda0").get<double>();
      m.pacing.zeta = pc.at("zeta").get<int>();
      m.pacing.extra_epochs = pc.at("extra_epochs").get<int>();
      m.lr = j.at("lr").get<double>();
      m.momentum = j.at("momentum").get<double>();
      m.snapshot_interval = j.at("snapshot_interval").get<int>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.expert_id = j.at("expert_id").get<std::size_t>();
      m.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
      m.train_loss = j.value("train_loss", std::vector<double>{});
    } catch (const json::exception& e) {
      throw FormatError(meta_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
      throw FormatError(meta_path.string() + ": " + e.what());
    }
    if (traj.meta.val_accuracy.size() != traj.snapshots.size()) {
      throw FormatError(meta_path.string() + ": val_accuracy length does not match snapshot count");
    }
  }
  return traj;
}

std::uint64_t trajectory_hash(const ExpertTrajectory& traj) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : traj.snapshots) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(s.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.size()) * sizeof(double); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace geom
