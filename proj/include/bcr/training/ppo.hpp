#pragma once

#include <span>
#include <vector>

#include "bcr/model/transformer.hpp"
#include "bcr/nn/adamw.hpp"
#include "bcr/training/config.hpp"
#include "bcr/training/trajectory.hpp"

namespace bcr::training {

/// Per-token advantages for a terminal-reward episode. `values[t]` is the
/// critic's estimate before token t; rewards are zero except `reward` after
/// the last token, and the value after the last token is zero.
std::vector<float> token_advantages(float reward, std::span<const float> values, float gamma, float lambda);

struct PpoStats {
  double mean_reward = 0.0;
  /// Fraction of episodes with full reward.
  double accuracy = 0.0;
  double mean_length = 0.0;
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double actor_grad_norm = 0.0;
  double critic_grad_norm = 0.0;
};

/// Rows, targets and grouping for teacher-forced scoring of trajectories as
/// plain prompt+response sequences.
struct PackedBatch {
  std::vector<std::vector<int>> inputs;
  /// Row in the packed hidden states predicting each generated token.
  std::vector<int> rows;
  std::vector<int> targets;
  std::vector<int> row_trajectory;
  std::vector<model::SequenceView> views() const;
};

PackedBatch pack_plain(std::span<const Trajectory* const> batch);

/// Actor-critic PPO over stored episodes. The actor and critic keep their
/// own AdamW states across updates.
class PpoTrainer {
 public:
  PpoTrainer(model::Transformer& actor, model::Transformer& critic, PpoConfig config);

  /// One PPO update (config.epochs passes over minibatches) on episodes the
  /// actor sampled. Throws std::runtime_error on a non-finite loss.
  PpoStats update(std::span<const Trajectory> episodes);

  const PpoConfig& config() const { return config_; }

 private:
  model::Transformer& actor_;
  model::Transformer& critic_;
  PpoConfig config_;
  nn::AdamW actor_opt_;
  nn::AdamW critic_opt_;
  long updates_ = 0;
};

}  // namespace bcr::training
