#pragma once

#include <span>
#include <vector>

#include "bcr/compression/controller.hpp"
#include "bcr/model/transformer.hpp"
#include "bcr/nn/adamw.hpp"
#include "bcr/training/config.hpp"
#include "bcr/training/trajectory.hpp"

namespace bcr::training {

/// Trajectories laid out the way a compressing student sees them: beacons
/// interleaved every c tokens, attention masked as if compressed windows had
/// been evicted.
struct InterleavedBatch {
  std::vector<std::vector<int>> inputs;
  std::vector<compression::BreadcrumbsLayout> layouts;
  /// Packed row predicting each generated token (beacon rows never appear).
  std::vector<int> rows;
  std::vector<int> targets;
  std::vector<int> row_trajectory;
  std::vector<model::SequenceView> views() const;
};

InterleavedBatch pack_interleaved(std::span<const Trajectory* const> batch, int ratio_c, int beacon_id);

/// Distillation loss of `student` on `batch` under the compressed layout
/// (graph attached to the student's parameters when they require grad).
nn::Tensor student_distill_loss(const model::Transformer& student, std::span<const Trajectory* const> batch,
                                int ratio_c);

/// Mean per-token negative log-likelihood of the trajectories' tokens under
/// `model` with the compressed layout (ratio_c <= 0: plain causal).
double mean_token_nll(const model::Transformer& model, std::span<const Trajectory> trajectories, int ratio_c);

/// Gives the beacon embedding row a fresh N(0, 0.02) draw.
void reset_beacon_row(model::Transformer& student, std::uint64_t seed);

struct DistillStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  long tokens = 0;
};

/// Student-side optimizer loop: one AdamW step of the distillation loss per
/// call. Only the student's parameters are ever handed to the optimizer.
class Distiller {
 public:
  Distiller(model::Transformer& student, DistillConfig config);
  DistillStats step(std::span<const Trajectory> trajectories);
  const DistillConfig& config() const { return config_; }

 private:
  model::Transformer& student_;
  DistillConfig config_;
  nn::AdamW opt_;
};

}  // namespace bcr::training
