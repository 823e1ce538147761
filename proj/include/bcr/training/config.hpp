#pragma once

#include "json.hpp"

namespace bcr::training {

struct PpoConfig {
  float actor_lr = 1e-6f;
  float critic_lr = 1e-5f;
  float clip_ratio = 0.2f;
  int epochs = 1;
  /// Trajectories per gradient step.
  int minibatch = 256;
  float gamma = 1.0f;
  float gae_lambda = 1.0f;
  float entropy_coef = 0.001f;
  float value_coef = 0.5f;
  float clip_range_value = 0.5f;
  float max_grad_norm = 1.0f;
  float weight_decay = 0.01f;
  /// Trajectories sampled per step.
  int batch = 256;
  /// Per-batch mean/std normalization of advantages.
  bool normalize_advantages = true;
  float temperature = 1.0f;
  /// Training generation limit in sampled tokens.
  int max_new_tokens = 128;

  /// Large-model settings (1e-6 actor lr, batch 256).
  static PpoConfig paper();
  /// Toy-model settings: batch 32, larger learning rates.
  static PpoConfig desk();

  void validate() const;
  nlohmann::json to_json() const;
  static PpoConfig from_json(const nlohmann::json& j);
  bool operator==(const PpoConfig&) const = default;
};

struct DistillConfig {
  float student_lr = 5e-6f;
  int ratio_c = 2;
  /// Teacher support kept per token; 0 keeps the whole vocabulary.
  int top_k = 100;
  /// Trajectories per student step.
  int batch = 256;
  float weight_decay = 0.01f;
  float max_grad_norm = 1.0f;

  static DistillConfig paper();
  static DistillConfig desk();

  /// `vocab_size` bounds top_k; pass 0 to skip that check.
  void validate(int vocab_size = 0) const;
  int effective_top_k(int vocab_size) const { return top_k <= 0 ? vocab_size : top_k; }
  nlohmann::json to_json() const;
  static DistillConfig from_json(const nlohmann::json& j);
  bool operator==(const DistillConfig&) const = default;
};

/// Supervised warm start on scripted demonstrations, standing in for a
/// pretrained base model.
struct SftConfig {
  int steps = 600;
  int batch = 32;
  float lr = 2e-3f;
  /// Linear warm-up length; cosine decay to lr / 10 over the remaining steps.
  int warmup_steps = 50;
  float weight_decay = 0.01f;
  float max_grad_norm = 1.0f;
  /// Chance a demonstration follows the right answer; the rest commit to a
  /// wrong one, leaving room for RL.
  float p_correct = 0.5f;
  /// Share of each batch spent on copy drills ("R:<digits>|" then the same
  /// digits), which teach the model to find a token in its context and
  /// continue from there.
  float copy_fraction = 0.5f;

  void validate() const;
  nlohmann::json to_json() const;
  static SftConfig from_json(const nlohmann::json& j);
  bool operator==(const SftConfig&) const = default;
};

}  // namespace bcr::training
