// Command-line entry point: dataset generation, training, evaluation,
// reporting and single-episode traces, all driven by one YAML config.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "bcr/cli/commands.hpp"
#include "bcr/cli/run_config.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  using namespace bcr;
  CLI::App app{"Toy-scale KV-cache compression with learned beacons: train, evaluate, report."};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", cli::version_string());

  std::string config_path;
  std::string output_override;
  int jobs_override = 0;
  std::uint64_t seed_override = 0;
  bool has_seed = false;
  app.add_option("-c,--config", config_path, "Run config (YAML)")->check(CLI::ExistingFile);
  app.add_option("-o,--output", output_override, "Output directory (overrides output_dir)");
  app.add_option("-j,--jobs", jobs_override, "Parallel episodes")->check(CLI::PositiveNumber);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& s) { seed_override = s, has_seed = true; }, "Run seed (overrides seed)");

  auto* tasks_cmd = app.add_subcommand("tasks", "Task datasets");
  tasks_cmd->require_subcommand(1);
  tasks_cmd->fallthrough();
  auto* gen_cmd = tasks_cmd->add_subcommand("gen", "Write instances as JSONL");
  std::string split = "test";
  int count = 0;
  gen_cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen_cmd->add_option("--count", count, "Number of instances (default: eval.n_instances)");

  auto* train_cmd = app.add_subcommand("train", "Warm start, PPO teacher, and student distillation");
  cli::TrainRequest train_req;
  train_cmd->add_option("--mode", train_req.mode, "teacher, joint or two-step")
      ->required()
      ->check(CLI::IsMember({"teacher", "joint", "two-step"}));
  train_cmd->add_option("--teacher", train_req.teacher, "Teacher checkpoint for two-step");

  auto* eval_cmd = app.add_subcommand("eval", "Accuracy vs. budget curves");
  cli::EvalRequest eval_req;
  std::vector<std::string> modes;
  std::string budget_kind;
  eval_cmd->add_option("--mode", modes, "br, tova, streaming, none (repeatable; default all)")
      ->check(CLI::IsMember({"br", "tova", "streaming", "none"}));
  eval_cmd->add_option("--from", eval_req.source, "Training output to evaluate: joint, two-step or teacher")
      ->check(CLI::IsMember({"joint", "two-step", "teacher"}));
  eval_cmd->add_option("--ratios", eval_req.ratios, "Compression ratios (default: config ratios)")->delimiter(',');
  eval_cmd->add_option("--kind", budget_kind, "fixed_cache or fixed_length")
      ->check(CLI::IsMember({"fixed_cache", "fixed_length"}));
  eval_cmd->add_option("--name", eval_req.name, "Output name under eval/");

  auto* report_cmd = app.add_subcommand("report", "Collect eval curves into CSV tables and an SVG plot");

  auto* trace_cmd = app.add_subcommand("trace", "Dump one episode's cache events as JSON lines");
  cli::TraceRequest trace_req;
  trace_cmd->add_option("--mode", trace_req.mode, "br, tova, streaming or none")
      ->check(CLI::IsMember({"br", "tova", "streaming", "none"}));
  trace_cmd->add_option("--c", trace_req.ratio_c, "Compression ratio")->check(CLI::PositiveNumber);
  trace_cmd->add_option("--model", trace_req.model, "Checkpoint directory (default: random weights)");
  trace_cmd->add_option("--init-seed", trace_req.init_seed, "Seed for random weights");
  trace_cmd->add_option("--prompt", trace_req.prompt, "Prompt text (default: held-out instance --index)");
  trace_cmd->add_option("--forced", trace_req.forced, "Response text to force instead of sampling");
  trace_cmd->add_option("--index", trace_req.index, "Held-out instance index")->check(CLI::NonNegativeNumber);
  trace_cmd->add_option("--max-tokens", trace_req.max_tokens, "Sampled token limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    cli::RunConfig config = config_path.empty() ? cli::RunConfig{} : cli::load_run_config(config_path);
    if (!output_override.empty()) config.output_dir = output_override;
    if (jobs_override > 0) config.jobs = jobs_override;
    if (has_seed) config.seed = seed_override;
    config.validate();
    const char* root_env = std::getenv("BCR_OUTPUT_ROOT");
    cli::RunPaths paths{config.output_path(root_env ? root_env : "")};

    if (gen_cmd->parsed()) {
      std::cout << cli::tasks_gen(config, paths, split, count > 0 ? count : config.eval.n_instances).string() << '\n';
    } else if (train_cmd->parsed()) {
      const auto s = cli::train(config, paths, train_req, std::cerr);
      std::cout << "trained " << train_req.mode << ": " << s.steps_run << " steps, " << s.samples
                << " samples, rolling accuracy " << s.final_rolling_accuracy << " -> " << s.dir.string() << '\n';
    } else if (eval_cmd->parsed()) {
      if (!modes.empty()) eval_req.modes = modes;
      if (!budget_kind.empty()) eval_req.kind = eval::budget_from_name(budget_kind);
      const auto s = cli::evaluate(config, paths, eval_req, std::cerr);
      std::cout << "method,c,Acc_c,AUAC\n";
      for (const auto& r : s.rows) std::cout << r.model_tag << ' ' << r.mode << ',' << r.ratio_c << ',' << r.acc_c << ',' << r.auac << '\n';
    } else if (report_cmd->parsed()) {
      std::cout << cli::report(config, paths).string() << '\n';
    } else if (trace_cmd->parsed()) {
      cli::trace(config, trace_req, std::cout);
    }
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
