#pragma once

#include <span>
#include <vector>

#include "bcr/model/transformer.hpp"
#include "bcr/nn/tensor.hpp"

namespace bcr::training {

/// Forward KL(teacher || student) per token on the teacher's stored support.
/// Both distributions are renormalized over that support. Token KLs are
/// averaged within each trajectory and then across trajectories.
///   student_logits: [rows, vocab], one row per generated token
///   teacher_topk:   one list per row
///   row_trajectory: trajectory index of each row, in [0, n_trajectories)
nn::Tensor kl_distill_loss(const nn::Tensor& student_logits,
                           std::span<const std::vector<model::TokenLogProb>> teacher_topk,
                           std::span<const int> row_trajectory, int n_trajectories);

/// Double-precision direct sum of KL(P || Q) for two distributions given as
/// probabilities over the same support, each renormalized first.
double kl_direct(std::span<const double> p, std::span<const double> q);

struct ActorLossStats {
  double surrogate = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Clipped PPO surrogate with entropy bonus, averaged over tokens:
///   -mean(min(r A, clip(r, 1-eps, 1+eps) A)) - entropy_coef * mean(H)
/// with r = exp(logp_new - logp_old). `masked_id` (>= 0) is a column held at
/// -inf in `logits` and skipped in the entropy.
nn::Tensor ppo_actor_loss(const nn::Tensor& logits, std::span<const int> actions, std::span<const float> old_logp,
                          std::span<const float> advantages, float clip_ratio, float entropy_coef, int masked_id,
                          ActorLossStats* stats = nullptr);

/// value_coef * mean(max((v - R)^2, (v_old + clip(v - v_old, +-clip_range) - R)^2))
nn::Tensor ppo_value_loss(const nn::Tensor& values, std::span<const float> old_values, std::span<const float> returns,
                          float clip_range, float value_coef);

/// Mean negative log-likelihood of `targets`, averaged per sequence and then
/// across sequences (same weighting as the distillation loss).
nn::Tensor sequence_nll(const nn::Tensor& logits, std::span<const int> targets, std::span<const int> row_sequence,
                        int n_sequences);

}  // namespace bcr::training
