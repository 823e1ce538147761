#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "bcr/model/transformer.hpp"
#include "bcr/model/vocab.hpp"
#include "bcr/tasks/tasks.hpp"
#include "bcr/training/config.hpp"
#include "bcr/training/distill.hpp"
#include "bcr/training/ppo.hpp"

namespace bcr::training {

struct PipelineOptions {
  tasks::TaskConfig tasks = tasks::TaskConfig::toy(tasks::TaskKind::stargraph);
  PpoConfig ppo = PpoConfig::desk();
  /// One entry per student; joint and two-step modes need at least one.
  std::vector<DistillConfig> students;
  int steps = 100;
  /// Early stop: once the teacher's sample accuracy averaged over the last
  /// `accuracy_window` steps reaches `target_accuracy`, run `extra_steps`
  /// more and stop. extra_steps < 0 disables early stopping.
  double target_accuracy = 0.9;
  int accuracy_window = 10;
  int extra_steps = -1;
  /// Teacher support stored per token; 0 keeps the whole vocabulary.
  int store_top_k = 0;
  int jobs = 1;
  std::uint64_t seed = 0;
  /// When set, every sampled trajectory is appended to
  /// <trajectory_dir>/trajectories.bin.
  std::filesystem::path trajectory_dir;
};

struct StepRecord {
  int step = 0;
  long samples = 0;
  double rolling_accuracy = 0.0;
  /// Present for modes that update the teacher.
  bool has_ppo = false;
  PpoStats ppo;
  double sample_accuracy = 0.0;
  double sample_reward = 0.0;
  std::vector<DistillStats> students;
  nlohmann::json to_json() const;
};

struct PipelineResult {
  int steps_run = 0;
  /// First step whose rolling accuracy met the target, or -1.
  int target_step = -1;
  long samples = 0;
  std::vector<StepRecord> history;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// PPO on the teacher alone.
PipelineResult train_teacher(model::Transformer& teacher, model::Transformer& critic,
                             const model::Vocabulary& vocab, const PipelineOptions& options,
                             const StepCallback& on_step = {});

/// Each step: sample a batch from the teacher, one PPO update, then one
/// distillation step per student on the same trajectories (teacher
/// distributions as recorded while sampling).
PipelineResult joint_rl_distill(model::Transformer& teacher, model::Transformer& critic,
                                std::vector<model::Transformer*> students, const model::Vocabulary& vocab,
                                const PipelineOptions& options, const StepCallback& on_step = {});

/// Each step: sample a fresh batch from the fixed teacher and take one
/// distillation step per student. Uses the same number of samples per step
/// as joint mode.
PipelineResult two_step_distill(const model::Transformer& teacher, std::vector<model::Transformer*> students,
                                const model::Vocabulary& vocab, const PipelineOptions& options,
                                const StepCallback& on_step = {});

/// Training instances for `step`: ppo.batch draws from the training seed range.
std::vector<tasks::TaskInstance> training_instances(const PipelineOptions& options, int step);

}  // namespace bcr::training
