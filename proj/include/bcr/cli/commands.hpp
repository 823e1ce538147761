#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bcr/cli/run_config.hpp"

namespace bcr::cli {

/// Version string recorded in manifests.
std::string version_string();

/// Writes <dir>/manifest.json: command, config and its hash, seeds, version.
void write_manifest(const std::filesystem::path& dir, const RunConfig& config, const std::string& command,
                    const nlohmann::json& extra = {});

/// Output layout under the run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path base() const { return root / "base"; }
  std::filesystem::path train(const std::string& mode) const { return root / mode; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path tasks() const { return root / "tasks"; }
};

/// The warm-start model: loaded from <root>/base when present, otherwise
/// trained on demonstrations and saved there.
std::filesystem::path ensure_base(const RunConfig& config, const RunPaths& paths, std::ostream& log);

/// `tasks gen`: writes <root>/tasks/<split>.jsonl. split is "train" or "test".
std::filesystem::path tasks_gen(const RunConfig& config, const RunPaths& paths, const std::string& split, int count);

struct TrainRequest {
  /// teacher, joint or two-step.
  std::string mode = "joint";
  /// Teacher checkpoint for two-step; defaults to <root>/teacher/teacher.
  std::filesystem::path teacher;
};

struct TrainSummary {
  std::filesystem::path dir;
  int steps_run = 0;
  int target_step = -1;
  long samples = 0;
  double final_rolling_accuracy = 0.0;
};

TrainSummary train(const RunConfig& config, const RunPaths& paths, const TrainRequest& request, std::ostream& log);

struct EvalRequest {
  /// Any of br, tova, streaming, none.
  std::vector<std::string> modes{"none", "br", "tova", "streaming"};
  /// Training output to evaluate: joint, two-step or teacher.
  std::string source = "joint";
  /// Overrides config ratios when non-empty.
  std::vector<int> ratios;
  /// Overrides the protocol's budget kind.
  std::optional<eval::Budget> kind;
  /// Output subdirectory name under <root>/eval (derived when empty).
  std::string name;
};

struct EvalRow {
  std::string mode;
  int ratio_c = 0;
  std::string model_tag;
  double acc_c = 0.0;
  double auac = 0.0;
  int n = 0;
};

struct EvalSummary {
  std::filesystem::path dir;
  std::vector<EvalRow> rows;
};

/// Writes curve.csv (one row per budget point), summary.csv (mode, c,
/// Acc_c, AUAC) and per-instance outcomes_<mode>_c<c>.jsonl.
EvalSummary evaluate(const RunConfig& config, const RunPaths& paths, const EvalRequest& request, std::ostream& log);

/// `report`: gathers every <root>/eval/*/curve.csv into report/curves.csv,
/// report/table.csv (Acc_c and AUAC per curve) and report/accuracy.svg.
std::filesystem::path report(const RunConfig& config, const RunPaths& paths);

struct TraceRequest {
  std::string mode = "br";
  int ratio_c = 2;
  /// Checkpoint directory; empty means random weights from `init_seed`.
  std::filesystem::path model;
  std::uint64_t init_seed = 0;
  /// Prompt text; when empty, held-out instance `index` is used.
  std::string prompt;
  /// Response text to force instead of sampling.
  std::string forced;
  int index = 0;
  long max_tokens = 200;
};

/// Single-episode dump: one JSON line per sample / beacon / evict / stop event.
void trace(const RunConfig& config, const TraceRequest& request, std::ostream& out);

}  // namespace bcr::cli
