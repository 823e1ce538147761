#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

namespace bcr::tasks {

enum class TaskKind { countdown, linsys, stargraph };
const char* kind_name(TaskKind kind);
TaskKind kind_from_name(const std::string& name);

/// Full renders the long-form natural-language prompt; toy renders a compact
/// prompt with the same payload for small models.
enum class PromptStyle { full, toy };
const char* style_name(PromptStyle style);
PromptStyle style_from_name(const std::string& name);

class TaskConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CountdownConfig {
  int min_numbers = 3;
  int max_numbers = 4;
  int min_value = 1;
  int max_value = 99;
  int max_target = 100;
};

struct LinSysConfig {
  int n_vars = 4;
  int max_abs_coef = 20;
  /// Nonzero coefficients allowed per equation; 0 means no limit.
  int max_nonzero = 2;
  int max_abs_solution = 10;
};

struct StarGraphConfig {
  int branch_len = 5;
  int min_branches = 2;
  int max_branches = 25;
  /// Node labels are distinct integers in [0, max_label].
  int max_label = 499;
};

struct TaskConfig {
  TaskKind kind = TaskKind::stargraph;
  PromptStyle style = PromptStyle::full;
  CountdownConfig countdown;
  LinSysConfig linsys;
  StarGraphConfig stargraph;

  /// Long-form settings: countdown 3-4 numbers, targets <= 100; linsys 4x4
  /// with <= 2 nonzeros and |coef| <= 20; stargraph branches of length 5,
  /// 2-25 of them.
  static TaskConfig standard(TaskKind kind);
  /// Dense 3x3 linsys variant with |coef| <= 20.
  static TaskConfig linsys_dense3();
  /// Small settings for desk-scale training: countdown 3 numbers <= 9,
  /// targets <= 20; linsys 2x2, |coef| <= 5; stargraph branch length 2,
  /// 2-4 branches, single-digit labels.
  static TaskConfig toy(TaskKind kind);

  /// Throws TaskConfigError when the settings cannot yield valid instances.
  void validate() const;
  nlohmann::json to_json() const;
  static TaskConfig from_json(const nlohmann::json& j);
  bool operator==(const TaskConfig&) const;
};

struct CountdownPayload {
  std::vector<int> numbers;
  int target = 0;
  bool operator==(const CountdownPayload&) const = default;
};

struct LinSysPayload {
  std::vector<std::vector<int>> coefficients;  // n x n
  std::vector<int> rhs;
  std::vector<int> solution;
  bool operator==(const LinSysPayload&) const = default;
};

struct StarGraphPayload {
  std::vector<int> nodes;  // display order
  std::vector<std::pair<int, int>> edges;  // display order
  int center = 0;
  int target = 0;
  bool operator==(const StarGraphPayload&) const = default;
};

using Payload = std::variant<CountdownPayload, LinSysPayload, StarGraphPayload>;

struct TaskInstance {
  TaskKind kind = TaskKind::stargraph;
  std::uint64_t seed = 0;
  PromptStyle style = PromptStyle::full;
  Payload payload;
  std::string prompt_text;

  nlohmann::json to_json() const;
  static TaskInstance from_json(const nlohmann::json& j);
};

/// Deterministic in (config, seed).
TaskInstance generate(const TaskConfig& config, std::uint64_t seed);

std::string render_prompt(TaskKind kind, const Payload& payload, PromptStyle style);
inline std::string render_prompt(const TaskInstance& t) { return render_prompt(t.kind, t.payload, t.style); }

/// Recovers the payload from a prompt of either style. Throws
/// std::invalid_argument on text that is not a rendered prompt. (Linsys
/// solutions are recomputed from the equations.)
Payload parse_prompt(TaskKind kind, std::string_view text);

inline constexpr double kRewardWrong = 0.0;
inline constexpr double kRewardFormatOnly = 0.1;
inline constexpr double kRewardCorrect = 1.0;

/// Contents of the last complete <answer>...</answer> span.
std::optional<std::string> extract_answer(std::string_view text);

/// 1.0 when the last answer span is correct, 0.1 when it parses into the
/// expected shape but is wrong, 0.0 otherwise. Never throws.
double score(const TaskInstance& instance, std::string_view generated_text);

/// Shortest expression found by exhaustive search over subsets, orders,
/// operations and bracketings that evaluates exactly to `target`.
std::optional<std::string> solve_countdown(const std::vector<int>& numbers, int target);
/// Every positive integer <= max_target reachable from `numbers`.
std::vector<int> reachable_targets(const std::vector<int>& numbers, int max_target);

/// The unique center-to-target path.
std::vector<int> stargraph_path(const StarGraphPayload& p);

/// Text of an integer list in the answer format, e.g. "[1, -2, 3]".
std::string format_list(const std::vector<int>& values);

/// Solution text for a task instance.
std::string reference_answer(const TaskInstance& instance);

/// Writes / reads JSON-lines datasets.
void write_jsonl(const std::filesystem::path& file, const std::vector<TaskInstance>& instances);
std::vector<TaskInstance> read_jsonl(const std::filesystem::path& file);

/// Instances for seeds [first_seed, first_seed + count).
std::vector<TaskInstance> generate_range(const TaskConfig& config, std::uint64_t first_seed, int count);

}  // namespace bcr::tasks
