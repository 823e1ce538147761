#include "bcr/cli/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "bcr/compression/controller.hpp"
#include "bcr/eval/eval.hpp"
#include "bcr/model/vocab.hpp"
#include "bcr/training/demonstrations.hpp"
#include "bcr/training/pipeline.hpp"
#include "bcr/training/seeds.hpp"

#ifndef BCR_VERSION
#define BCR_VERSION "0.1.0"
#endif

namespace bcr::cli {

namespace fs = std::filesystem;

namespace {

model::Vocabulary vocabulary_for(const RunConfig& config) {
  auto vocab = model::Vocabulary::standard();
  if (vocab.size() != config.model.vocab_size) {
    throw std::runtime_error("model.vocab_size is " + std::to_string(config.model.vocab_size) +
                             " but the task vocabulary has " + std::to_string(vocab.size()) + " tokens");
  }
  if (vocab.beacon() != config.model.beacon_id) {
    throw std::runtime_error("model.beacon_id must be " + std::to_string(vocab.beacon()));
  }
  return vocab;
}

bool has_checkpoint(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

model::Transformer load_checkpoint(const fs::path& dir, const std::string& hint) {
  if (!has_checkpoint(dir)) throw std::runtime_error("missing checkpoint " + dir.string() + " (" + hint + ")");
  return model::Transformer::load(dir);
}

std::string student_name(int c) { return "student_c" + std::to_string(c); }

training::PipelineOptions pipeline_options(const RunConfig& config, const fs::path& dir) {
  training::PipelineOptions o;
  o.tasks = config.task;
  o.ppo = config.ppo;
  o.steps = config.train.steps;
  o.target_accuracy = config.train.target_accuracy;
  o.accuracy_window = config.train.accuracy_window;
  o.extra_steps = config.train.extra_steps;
  o.store_top_k = config.train.store_top_k;
  o.jobs = config.jobs;
  o.seed = config.seed;
  o.trajectory_dir = dir / "trajectories";
  for (int c : config.ratios) o.students.push_back(config.distill_for(c));
  return o;
}

void log_step(std::ostream& log, const training::StepRecord& r, int every) {
  if (r.step % every != 0) return;
  log << "step " << r.step << " acc " << r.sample_accuracy << " rolling " << r.rolling_accuracy;
  if (r.has_ppo) log << " len " << r.ppo.mean_length << " ent " << r.ppo.entropy << " vloss " << r.ppo.value_loss;
  for (const auto& s : r.students) log << " kl " << s.loss;
  log << std::endl;
}

}  // namespace

std::string version_string() { return BCR_VERSION; }

void write_manifest(const fs::path& dir, const RunConfig& config, const std::string& command,
                    const nlohmann::json& extra) {
  fs::create_directories(dir);
  nlohmann::json m{{"command", command},
                   {"version", version_string()},
                   {"config_hash", config_hash(config)},
                   {"seeds", {{"seed", config.seed}, {"base_seed", config.base_seed}, {"eval_seed", config.eval.seed}}},
                   {"config", config.to_json()}};
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) m[k] = v;
  }
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

fs::path ensure_base(const RunConfig& config, const RunPaths& paths, std::ostream& log) {
  const fs::path dir = paths.base() / "model";
  if (has_checkpoint(dir)) {
    const auto m = model::Transformer::load(dir);
    if (!(m.config() == config.model)) {
      throw std::runtime_error("base model at " + dir.string() + " was built for a different model config");
    }
    return dir;
  }
  const auto vocab = vocabulary_for(config);
  model::Transformer base(config.model, model::Role::teacher,
                          training::derive_seed({config.base_seed, static_cast<std::uint64_t>(training::SeedPurpose::init)}));
  log << "warm start: " << config.sft.steps << " demonstration steps" << std::endl;
  std::ofstream metrics;
  fs::create_directories(paths.base());
  metrics.open(paths.base() / "metrics.jsonl");
  training::sft_train(base, vocab, config.task, config.sft, config.base_seed, [&](const training::SftProgress& p) {
    metrics << nlohmann::json{{"step", p.step}, {"loss", p.loss}}.dump() << '\n';
    if (p.step % 50 == 0) log << "sft step " << p.step << " loss " << p.loss << std::endl;
  });
  base.save(dir, {{"stage", "warm_start"}});
  write_manifest(paths.base(), config, "train (warm start)");
  return dir;
}

fs::path tasks_gen(const RunConfig& config, const RunPaths& paths, const std::string& split, int count) {
  if (count <= 0) throw std::invalid_argument("task count must be positive");
  std::vector<tasks::TaskInstance> out;
  if (split == "test") {
    auto p = config.eval;
    p.n_instances = count;
    out = eval::test_set(config.task, p);
  } else if (split == "train") {
    for (int i = 0; i < count; ++i) {
      out.push_back(tasks::generate(config.task, training::train_task_seed(config.seed, training::SeedPurpose::train_tasks,
                                                                           static_cast<std::uint64_t>(i / config.ppo.batch),
                                                                           static_cast<std::uint64_t>(i % config.ppo.batch))));
    }
  } else {
    throw std::invalid_argument("unknown split '" + split + "' (expected train or test)");
  }
  const fs::path file = paths.tasks() / (split + ".jsonl");
  fs::create_directories(paths.tasks());
  tasks::write_jsonl(file, out);
  write_manifest(paths.tasks(), config, "tasks gen", {{"split", split}, {"count", count}});
  return file;
}

TrainSummary train(const RunConfig& config, const RunPaths& paths, const TrainRequest& request, std::ostream& log) {
  config.validate();
  const auto vocab = vocabulary_for(config);
  const std::string& mode = request.mode;
  if (mode != "teacher" && mode != "joint" && mode != "two-step") {
    throw std::invalid_argument("unknown train mode '" + mode + "' (expected teacher, joint or two-step)");
  }
  const fs::path dir = paths.train(mode);
  fs::path teacher_dir;
  if (mode == "two-step") {
    // Check the input before doing anything expensive.
    teacher_dir = request.teacher.empty() ? paths.train("teacher") / "teacher" : request.teacher;
    if (!has_checkpoint(teacher_dir)) {
      throw std::runtime_error("missing teacher checkpoint " + teacher_dir.string() +
                               " (run `train --mode teacher` first or pass --teacher)");
    }
  }
  const auto base_dir = ensure_base(config, paths, log);
  const auto base = model::Transformer::load(base_dir);
  fs::create_directories(dir);
  auto options = pipeline_options(config, dir);
  if (fs::exists(options.trajectory_dir)) fs::remove_all(options.trajectory_dir);

  const std::uint64_t s = config.seed;
  model::Transformer teacher = mode == "two-step" ? load_checkpoint(teacher_dir, "teacher")
                                                  : model::Transformer::derive(base, model::Role::teacher, s);
  model::Transformer critic = model::Transformer::derive(base, model::Role::critic, training::derive_seed({s, 1}));
  std::vector<model::Transformer> students;
  if (mode != "teacher") {
    for (int c : config.ratios) {
      students.push_back(model::Transformer::derive(base, model::Role::student, training::derive_seed({s, 2, static_cast<std::uint64_t>(c)})));
      training::reset_beacon_row(students.back(), training::derive_seed({s, 3, static_cast<std::uint64_t>(c)}));
    }
  }
  std::vector<model::Transformer*> student_ptrs;
  for (auto& m : students) student_ptrs.push_back(&m);

  auto save_all = [&](const fs::path& where) {
    if (mode != "two-step") {
      teacher.save(where / "teacher", {{"seed", s}});
      critic.save(where / "critic", {{"seed", s}});
    }
    for (std::size_t i = 0; i < students.size(); ++i) {
      students[i].save(where / student_name(config.ratios[i]), {{"seed", s}, {"ratio_c", config.ratios[i]}});
    }
  };

  std::ofstream metrics(dir / "metrics.jsonl");
  auto on_step = [&](const training::StepRecord& r) {
    metrics << r.to_json().dump() << '\n';
    metrics.flush();
    log_step(log, r, 10);
    if (config.train.checkpoint_every > 0 && (r.step + 1) % config.train.checkpoint_every == 0) {
      save_all(dir / "checkpoints" / ("step_" + std::to_string(r.step + 1)));
    }
  };

  training::PipelineResult result;
  if (mode == "teacher") {
    options.students.clear();
    result = training::train_teacher(teacher, critic, vocab, options, on_step);
  } else if (mode == "joint") {
    result = training::joint_rl_distill(teacher, critic, student_ptrs, vocab, options, on_step);
  } else {
    // Same sample budget as a joint run with the same schedule, no early stop.
    options.extra_steps = -1;
    result = training::two_step_distill(teacher, student_ptrs, vocab, options, on_step);
  }
  save_all(dir);

  TrainSummary summary;
  summary.dir = dir;
  summary.steps_run = result.steps_run;
  summary.target_step = result.target_step;
  summary.samples = result.samples;
  if (!result.history.empty()) summary.final_rolling_accuracy = result.history.back().rolling_accuracy;
  write_manifest(dir, config, "train --mode " + mode,
                 {{"steps_run", summary.steps_run},
                  {"target_step", summary.target_step},
                  {"samples", summary.samples},
                  {"final_rolling_accuracy", summary.final_rolling_accuracy},
                  {"teacher", mode == "two-step" ? teacher_dir.string() : (dir / "teacher").string()}});
  return summary;
}

EvalSummary evaluate(const RunConfig& config, const RunPaths& paths, const EvalRequest& request, std::ostream& log) {
  config.validate();
  const auto vocab = vocabulary_for(config);
  auto protocol = config.eval;
  if (request.kind) protocol.kind = *request.kind;
  const auto ratios = request.ratios.empty() ? config.ratios : request.ratios;
  const fs::path source = paths.train(request.source);
  const fs::path teacher_dir =
      request.source == "two-step" ? paths.train("teacher") / "teacher" : source / "teacher";
  for (const auto& m : request.modes) compression::mode_from_name(m);

  EvalSummary summary;
  std::string name = request.name;
  if (name.empty()) name = request.source + "-" + eval::budget_name(protocol.kind);
  summary.dir = paths.eval() / name;
  fs::create_directories(summary.dir);
  const auto instances = eval::test_set(config.task, protocol);

  std::vector<eval::CurveRow> rows;
  std::optional<model::Transformer> teacher;
  for (const auto& mode_name : request.modes) {
    const auto mode = compression::mode_from_name(mode_name);
    const std::vector<int> cs = mode == compression::Mode::none ? std::vector<int>{0} : ratios;
    for (int c : cs) {
      std::optional<model::Transformer> student;
      const model::Transformer* policy = nullptr;
      std::string tag;
      if (mode == compression::Mode::breadcrumbs) {
        student = load_checkpoint(source / student_name(c), "train a student for c=" + std::to_string(c) + " first");
        policy = &*student;
        tag = student_name(c);
      } else {
        if (!teacher) teacher = load_checkpoint(teacher_dir, "run `train --mode teacher` or `--mode joint` first");
        policy = &*teacher;
        tag = "teacher";
      }
      compression::CompressionRule rule{std::max(c, 1), vocab.beacon(), mode};
      const auto r = eval::evaluate(*policy, vocab, instances, rule, protocol, config.jobs);
      const std::string label = compression::mode_name(mode);
      log << label << " c=" << c << " Acc_c " << r.acc_c << " AUAC " << r.auac << std::endl;
      eval::write_outcomes_jsonl(summary.dir / ("outcomes_" + label + "_c" + std::to_string(c) + ".jsonl"), r.outcomes);
      auto curve = eval::curve_rows(r.curve, tasks::kind_name(config.task.kind), request.source + "/" + tag, label, c);
      rows.insert(rows.end(), curve.begin(), curve.end());
      summary.rows.push_back({label, c, request.source + "/" + tag, r.acc_c, r.auac, r.curve.n});
    }
  }
  {
    std::ofstream csv(summary.dir / "curve.csv");
    eval::write_curve_csv(csv, rows);
  }
  {
    std::ofstream csv(summary.dir / "summary.csv");
    csv << "task,model_tag,mode,c,n,acc_c,auac\n";
    csv.precision(17);
    for (const auto& r : summary.rows) {
      csv << tasks::kind_name(config.task.kind) << ',' << r.model_tag << ',' << r.mode << ',' << r.ratio_c << ','
          << r.n << ',' << r.acc_c << ',' << r.auac << '\n';
    }
  }
  write_manifest(summary.dir, config, "eval",
                 {{"source", request.source}, {"modes", request.modes}, {"ratios", ratios},
                  {"protocol", protocol.to_json()}});
  return summary;
}

fs::path report(const RunConfig& config, const RunPaths& paths) {
  std::vector<fs::path> files;
  if (fs::exists(paths.eval())) {
    for (const auto& e : fs::directory_iterator(paths.eval())) {
      if (fs::exists(e.path() / "curve.csv")) files.push_back(e.path() / "curve.csv");
    }
  }
  if (files.empty()) throw std::runtime_error("no evaluation results under " + paths.eval().string() + " (run `eval` first)");
  std::sort(files.begin(), files.end());
  std::vector<eval::CurveRow> rows;
  for (const auto& f : files) {
    auto part = eval::read_curve_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const fs::path dir = paths.report();
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "curves.csv");
    eval::write_curve_csv(csv, rows);
  }
  std::map<std::tuple<std::string, std::string, std::string, int>, eval::EvalCurve> series;
  for (const auto& r : rows) {
    auto& c = series[{r.task, r.model_tag, r.mode, r.ratio_c}];
    c.points.push_back({r.budget, r.accuracy});
    c.max_budget = std::max(c.max_budget, r.budget);
    c.n = r.n;
  }
  {
    std::ofstream csv(dir / "table.csv");
    csv << "task,model_tag,mode,c,n,acc_c,auac\n";
    csv.precision(17);
    for (auto& [key, curve] : series) {
      std::sort(curve.points.begin(), curve.points.end(), [](const auto& a, const auto& b) { return a.budget < b.budget; });
      const auto& [task, tag, mode, c] = key;
      csv << task << ',' << tag << ',' << mode << ',' << c << ',' << curve.n << ',' << curve.acc_at_max() << ','
          << eval::auac(curve, curve.max_budget) << '\n';
    }
  }
  {
    std::ofstream svg(dir / "accuracy.svg");
    eval::write_svg(svg, rows, std::string("Accuracy vs. budget (") + tasks::kind_name(config.task.kind) + ")");
  }
  write_manifest(dir, config, "report", {{"inputs", [&] {
                                            std::vector<std::string> s;
                                            for (const auto& f : files) s.push_back(f.string());
                                            return s;
                                          }()}});
  return dir;
}

void trace(const RunConfig& config, const TraceRequest& request, std::ostream& out) {
  const auto vocab = vocabulary_for(config);
  const model::Transformer policy = request.model.empty()
                                        ? model::Transformer(config.model, model::Role::student, request.init_seed)
                                        : load_checkpoint(request.model, "pass an existing checkpoint directory");
  std::string prompt = request.prompt;
  if (prompt.empty()) {
    auto p = config.eval;
    p.n_instances = request.index + 1;
    prompt = eval::test_set(config.task, p).back().prompt_text;
  }
  const auto prompt_ids = vocab.tokenize(prompt);
  const auto forced = vocab.tokenize(request.forced);
  compression::CompressionRule rule{request.ratio_c, vocab.beacon(), compression::mode_from_name(request.mode)};
  compression::Limits limits{config.eval.kind == eval::Budget::fixed_cache ? config.eval.limit : 0, request.max_tokens};
  compression::GenerationOptions gen;
  gen.temperature = config.eval.temperature;
  gen.stop_id = vocab.stop();
  gen.forced_tokens = forced;
  std::mt19937_64 rng(config.eval.seed);
  const auto r = compression::generate(policy, prompt_ids, rule, limits, gen, rng);
  r.write_trace(out);
  nlohmann::json summary{{"summary", true},
                         {"question_len", r.question_len},
                         {"tokens", r.tokens.size()},
                         {"stopped_by", compression::stop_reason_name(r.stopped_by)},
                         {"peak_entries", r.peak_entries},
                         {"text", vocab.detokenize(r.tokens)}};
  out << summary.dump() << '\n';
}

}  // namespace bcr::cli
