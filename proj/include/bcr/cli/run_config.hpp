#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcr/eval/eval.hpp"
#include "bcr/model/transformer.hpp"
#include "bcr/tasks/tasks.hpp"
#include "bcr/training/config.hpp"

namespace bcr::cli {

/// A config problem tied to a place in the file.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& file, int line, int column, const std::string& message);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

struct TrainSchedule {
  /// Upper bound on PPO / distillation steps.
  int steps = 2000;
  double target_accuracy = 0.9;
  int accuracy_window = 10;
  /// Steps to keep going once the target is met; < 0 never stops early.
  int extra_steps = 100;
  /// Save checkpoints every this many steps (0: only at the end).
  int checkpoint_every = 0;
  /// Store the teacher's top-k per token; 0 keeps the whole vocabulary.
  int store_top_k = 0;
  bool operator==(const TrainSchedule&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  /// Seed for the warm-start base model, shared across run seeds.
  std::uint64_t base_seed = 0;
  std::string output_dir = "run";
  int jobs = 1;
  tasks::TaskConfig task = tasks::TaskConfig::toy(tasks::TaskKind::stargraph);
  model::ModelConfig model;
  training::SftConfig sft;
  training::PpoConfig ppo = training::PpoConfig::desk();
  /// Shared student settings; ratio_c is taken from `ratios`.
  training::DistillConfig distill = training::DistillConfig::desk();
  std::vector<int> ratios{2, 4, 8, 16, 32};
  TrainSchedule train;
  eval::EvalProtocol eval;

  /// Cross-field checks (vocab vs model, ratios, ...).
  void validate() const;
  /// Student settings for ratio c.
  training::DistillConfig distill_for(int c) const;
  /// Output directory resolved against `root` when relative.
  std::filesystem::path output_path(const std::filesystem::path& root) const;

  std::string to_yaml() const;
  /// Canonical JSON form (also the input of the config hash).
  nlohmann::json to_json() const;
  bool operator==(const RunConfig&) const;
};

/// Parses YAML text; `file` names the source in error messages.
RunConfig parse_run_config(const std::string& text, const std::string& file = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// 64-bit FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace bcr::cli
