#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geom/curriculum.hpp"
#include "geom/models.hpp"
#include "geom/parallel.hpp"

namespace geom {

struct BufferConfig {
  std::size_t num_experts = 10;
  Arch arch = Arch::kGcn2;
  std::size_t hidden_dim = 64;
  // Hard cap on epochs; the run itself lasts zeta + extra_epochs epochs.
  int epochs = 100;
  double lr = 0.2;
  double momentum = 0.0;
  PacingConfig pacing;
  int snapshot_interval = 1;
  // Early stop after this many full-set epochs without a val-accuracy gain.
  // 0 disables it.
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
  int planned_epochs() const { return pacing.zeta + pacing.extra_epochs; }
};

struct TrajectoryMeta {
  PacingConfig pacing;
  double lr = 0.0;
  double momentum = 0.0;
  int snapshot_interval = 1;
  std::uint64_t seed = 0;
  std::size_t expert_id = 0;
  std::vector<double> val_accuracy;  // one per snapshot
  std::vector<double> train_loss;    // one per epoch, on that epoch's subset
};

struct ExpertTrajectory {
  ModelSpec spec;
  std::vector<ParameterVector> snapshots;
  TrajectoryMeta meta;

  std::size_t length() const { return snapshots.size(); }
  // Throws ContractError if the invariants do not hold.
  void validate() const;
};

// Per-expert seed derived from the global seed.
std::uint64_t expert_seed(std::uint64_t seed, std::size_t expert_id);

ExpertTrajectory train_expert(const GraphDataset& g, const BufferConfig& cfg, std::size_t expert_id);

std::vector<ExpertTrajectory> train_experts(const GraphDataset& g, const BufferConfig& cfg,
                                            const WorkerPool& pool);

// Loss sequence of plain full-set SGD (no curriculum, no early stop) for
// `epochs` epochs from the same init as train_expert.
std::vector<double> plain_training_losses(const GraphDataset& g, const BufferConfig& cfg,
                                          std::size_t expert_id, int epochs);

struct GradNormSeries {
  std::vector<double> easy;       // one per snapshot
  std::vector<double> difficult;
};

// Mean per-node cross-entropy gradient norm over the easiest `easy_fraction`
// of training nodes and over the rest, for each snapshot.
GradNormSeries grad_norm_analysis(const GraphDataset& g, const ExpertTrajectory& traj,
                                  double easy_fraction);

// Per training node gradient norms at one parameter vector, indexed like
// g.train_indices().
std::vector<double> node_grad_norms(const GraphDataset& g, const NormalizedAdjacency& adj,
                                    const ModelSpec& spec, const ParameterVector& theta);

// Binary GEOMTRAJ file plus a JSON sidecar at path + ".meta.json".
void save_trajectory(const ExpertTrajectory& traj, const std::filesystem::path& path);
ExpertTrajectory load_trajectory(const std::filesystem::path& path);

std::filesystem::path trajectory_meta_path(const std::filesystem::path& path);

// 64-bit FNV-1a over the raw snapshot bytes.
std::uint64_t trajectory_hash(const ExpertTrajectory& traj);

}  // namespace geom
