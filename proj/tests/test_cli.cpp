#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "bcr/cli/commands.hpp"
#include "bcr/cli/run_config.hpp"

using namespace bcr;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(BCR_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig = R"(seed: 3
base_seed: 4
output_dir: tiny
task:
  kind: stargraph
  preset: toy
model:
  n_layers: 1
  n_heads: 2
  d_model: 16
  d_ff: 32
  max_positions: 128
sft:
  steps: 2
  batch: 4
  warmup_steps: 1
ppo:
  batch: 4
  minibatch: 4
  max_new_tokens: 12
ratios: [2, 4]
train:
  steps: 2
eval:
  n_instances: 4
  limit: 60
  max_new_tokens: 30
)";

}  // namespace

TEST_CASE("run config round-trips through YAML") {
  auto c = cli::parse_run_config(kTinyConfig);
  CHECK(c.seed == 3);
  CHECK(c.model.d_model == 16);
  CHECK(c.ratios == std::vector<int>{2, 4});
  CHECK(c.task == tasks::TaskConfig::toy(tasks::TaskKind::stargraph));
  const auto again = cli::parse_run_config(c.to_yaml());
  CHECK(again == c);
  CHECK(cli::parse_run_config(again.to_yaml()).to_yaml() == c.to_yaml());
  CHECK(cli::config_hash(again) == cli::config_hash(c));

  // Non-default floats survive the trip exactly.
  c.ppo.actor_lr = 1.2345678e-5f;
  c.distill.student_lr = 0.3f;
  c.train.target_accuracy = 0.85;
  c.eval.temperature = 0.7f;
  c.task = tasks::TaskConfig::standard(tasks::TaskKind::linsys);
  CHECK(cli::parse_run_config(c.to_yaml()) == c);
  CHECK(cli::config_hash(c) != cli::config_hash(again));
}

TEST_CASE("config errors point at the offending line") {
  auto expect_line = [](const std::string& text, int line, const std::string& fragment) {
    try {
      cli::parse_run_config(text, "run.yaml");
      FAIL("expected a config error");
    } catch (const cli::ConfigError& e) {
      CHECK(e.line() == line);
      const std::string what = e.what();
      CHECK(what.find("run.yaml:" + std::to_string(line) + ":") == 0);
      CHECK(what.find(fragment) != std::string::npos);
    }
  };
  expect_line("seed: 1\nppo:\n  batch: 8\n  clip: 0.1\n", 4, "unknown key 'clip'");
  expect_line("seed: 1\nmodel:\n  d_model: big\n", 3, "must be an integer");
  expect_line("seed: 1\n\nratios: 2\n", 3, "must be a list");
  expect_line("task:\n  kind: mazes\n", 2, "unknown task kind");
  expect_line("seed: 1\nppo:\n  clip_ratio: 1.5\n", 3, "clip_ratio");
  expect_line("seed: [1, 2\n", 2, "");
}

TEST_CASE("trace reproduces the c = 2 compression example") {
  cli::RunConfig c;
  cli::TraceRequest t;
  t.mode = "br";
  t.ratio_c = 2;
  t.prompt = "abc";
  t.forced = "defgh";
  std::ostringstream out;
  cli::trace(c, t, out);
  std::vector<long> entries;
  std::istringstream lines(out.str());
  std::string line;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("event") && (j["event"] == "sample" || j["event"] == "evict")) entries.push_back(j["entries_now"]);
  }
  CHECK(entries == std::vector<long>{3, 4, 5, 4, 5, 6, 5});
}

TEST_CASE("end-to-end tiny run: outputs are directory-scoped and re-runs reproduce CSVs") {
  const fs::path root = fs::temp_directory_path() / "bcr_test_cli_run";
  fs::remove_all(root);
  auto config = cli::parse_run_config(kTinyConfig);
  config.output_dir = root.string();
  cli::RunPaths paths{root};
  std::ostringstream log;

  CHECK_THROWS_WITH_AS(cli::train(config, paths, {"two-step", {}}, log), doctest::Contains("missing teacher checkpoint"),
                       std::runtime_error);
  const auto joint = cli::train(config, paths, {"joint", {}}, log);
  CHECK(joint.steps_run == 2);
  CHECK(joint.samples == 8);
  for (const char* sub : {"teacher", "critic", "student_c2", "student_c4"}) CHECK(fs::exists(joint.dir / sub / "manifest.json"));
  CHECK(fs::exists(joint.dir / "trajectories" / "trajectories.bin"));
  const auto manifest = nlohmann::json::parse(read_file(joint.dir / "manifest.json"));
  CHECK(manifest.at("config_hash") == cli::config_hash(config));
  CHECK(manifest.at("seeds").at("seed") == 3);

  const std::string teacher_bytes = read_file(joint.dir / "teacher" / "weights.bin");
  const auto e1 = cli::evaluate(config, paths, {}, log);
  const std::string csv1 = read_file(e1.dir / "curve.csv");
  CHECK(csv1.rfind("task,model_tag,mode,c,budget,accuracy,n\n", 0) == 0);
  // none once, then br/tova/streaming for each ratio.
  CHECK(e1.rows.size() == 7);
  const auto e2 = cli::evaluate(config, paths, {}, log);
  CHECK(read_file(e2.dir / "curve.csv") == csv1);
  CHECK(read_file(e2.dir / "summary.csv") == read_file(e1.dir / "summary.csv"));
  // Evaluation never touches training outputs.
  CHECK(read_file(joint.dir / "teacher" / "weights.bin") == teacher_bytes);

  const auto rep = cli::report(config, paths);
  CHECK(fs::exists(rep / "table.csv"));
  CHECK(fs::exists(rep / "accuracy.svg"));
  CHECK(read_file(rep / "curves.csv") == csv1);

  const auto data = cli::tasks_gen(config, paths, "test", 5);
  CHECK(tasks::read_jsonl(data).size() == 5);
  fs::remove_all(root);
}

TEST_CASE("tool exit codes") {
  CHECK(run_tool("--help") == 0);
  CHECK(run_tool("trace --no-such-flag") == 1);
  CHECK(run_tool("") == 1);
  const fs::path dir = fs::temp_directory_path() / "bcr_test_cli_exit";
  fs::create_directories(dir);
  {
    std::ofstream bad(dir / "bad.yaml");
    bad << "ppo:\n  nonsense: 1\n";
  }
  CHECK(run_tool("--config " + (dir / "bad.yaml").string() + " report") == 1);
  // Missing inputs are runtime failures.
  CHECK(run_tool("-o " + (dir / "empty").string() + " report") == 2);
  fs::remove_all(dir);
}
