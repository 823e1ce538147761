#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bcr/compression/controller.hpp"
#include "bcr/model/transformer.hpp"
#include "bcr/model/vocab.hpp"
#include "bcr/tasks/tasks.hpp"

namespace bcr::eval {

enum class Budget { fixed_cache, fixed_length };
const char* budget_name(Budget b);
Budget budget_from_name(const std::string& name);

struct EvalProtocol {
  Budget kind = Budget::fixed_cache;
  /// Cache entries (prompt included) or sampled tokens.
  long limit = 1000;
  int n_instances = 256;
  /// Held-out instance i uses training::eval_task_seed(first_index + i).
  std::uint64_t first_index = 0;
  float temperature = 0.0f;
  std::uint64_t seed = 0;
  /// Safety cap on sampled tokens under fixed_cache (0: none).
  long max_new_tokens = 2000;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalProtocol from_json(const nlohmann::json& j);
  bool operator==(const EvalProtocol&) const = default;
};

/// One episode. `usage` is the peak cache size (fixed_cache) or the number
/// of sampled tokens (fixed_length) over the whole episode; an episode is
/// correct at budget s iff it ended on the stop token with full reward and
/// usage <= s.
struct Outcome {
  int index = 0;
  std::uint64_t task_seed = 0;
  double reward = 0.0;
  bool stopped = false;
  long usage = 0;
  long peak_entries = 0;
  long tokens = 0;
  std::string response;

  bool correct_within(long budget) const { return stopped && reward >= tasks::kRewardCorrect && usage <= budget; }
  nlohmann::json to_json() const;
  static Outcome from_json(const nlohmann::json& j);
};

struct CurvePoint {
  long budget = 0;
  double accuracy = 0.0;
};

struct EvalCurve {
  std::vector<CurvePoint> points;  // budgets strictly increasing
  long max_budget = 0;
  int n = 0;
  /// Accuracy at max_budget.
  double acc_at_max() const;
};

/// Budget grid: 0, every multiple of max_budget / 100, and every observed
/// usage <= max_budget.
std::vector<long> budget_grid(std::span<const Outcome> outcomes, long max_budget);

/// Pure fold of outcomes into the accuracy curve.
EvalCurve curve_from_outcomes(std::span<const Outcome> outcomes, long max_budget);

/// Trapezoidal area under accuracy over [0, max_budget], divided by
/// max_budget. Points before the first budget take its accuracy; points past
/// the last take the last one. Throws on an empty curve.
double auac(const EvalCurve& curve, long max_budget);

struct EvalResult {
  std::vector<Outcome> outcomes;
  EvalCurve curve;
  double acc_c = 0.0;
  double auac = 0.0;
};

/// Held-out instances for a protocol.
std::vector<tasks::TaskInstance> test_set(const tasks::TaskConfig& config, const EvalProtocol& protocol);

/// One episode per instance at the protocol's maximum budget, in parallel
/// over `jobs` threads; episode i samples with a generator seeded by
/// (protocol.seed, i).
EvalResult evaluate(const model::StepPolicy& policy, const model::Vocabulary& vocab,
                    std::span<const tasks::TaskInstance> instances, const compression::CompressionRule& rule,
                    const EvalProtocol& protocol, int jobs = 1);

/// Single episode at an explicit budget, used to spot-check the single-pass
/// curve construction.
Outcome run_episode(const model::StepPolicy& policy, const model::Vocabulary& vocab, const tasks::TaskInstance& instance,
                    const compression::CompressionRule& rule, const EvalProtocol& protocol, long budget, int index);

void write_outcomes_jsonl(const std::filesystem::path& file, std::span<const Outcome> outcomes);
std::vector<Outcome> read_outcomes_jsonl(const std::filesystem::path& file);

/// One labelled curve as it appears in CSV output.
struct CurveRow {
  std::string task;
  std::string model_tag;
  std::string mode;
  int ratio_c = 0;
  long budget = 0;
  double accuracy = 0.0;
  int n = 0;
};

inline constexpr const char* kCurveCsvHeader = "task,model_tag,mode,c,budget,accuracy,n";

void write_curve_csv(std::ostream& os, std::span<const CurveRow> rows, bool header = true);
std::vector<CurveRow> read_curve_csv(const std::filesystem::path& file);
std::vector<CurveRow> curve_rows(const EvalCurve& curve, const std::string& task, const std::string& model_tag,
                                 const std::string& mode, int ratio_c);

/// Line plot of accuracy against budget, one polyline per (model_tag, mode, c).
void write_svg(std::ostream& os, std::span<const CurveRow> rows, const std::string& title);

}  // namespace bcr::eval
