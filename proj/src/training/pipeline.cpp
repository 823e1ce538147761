#include "bcr/training/pipeline.hpp"

#include <deque>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "bcr/training/rollout.hpp"
#include "bcr/training/seeds.hpp"
#include "bcr/training/trajectory.hpp"

namespace bcr::training {

namespace {

nlohmann::json ppo_json(const PpoStats& s) {
  return {{"mean_reward", s.mean_reward},   {"accuracy", s.accuracy},
          {"mean_length", s.mean_length},   {"actor_loss", s.actor_loss},
          {"value_loss", s.value_loss},     {"entropy", s.entropy},
          {"clip_fraction", s.clip_fraction}, {"approx_kl", s.approx_kl},
          {"actor_grad_norm", s.actor_grad_norm}, {"critic_grad_norm", s.critic_grad_norm}};
}

enum class Flavor { teacher, joint, two_step };

PipelineResult run(model::Transformer* teacher, const model::Transformer& sampler, model::Transformer* critic,
                   std::vector<model::Transformer*> students, const model::Vocabulary& vocab,
                   const PipelineOptions& options, const StepCallback& on_step, Flavor flavor) {
  options.tasks.validate();
  if (options.students.size() != students.size()) {
    throw std::invalid_argument("pipeline: one distill config per student required");
  }
  if (flavor != Flavor::teacher && students.empty()) throw std::invalid_argument("pipeline: no students");
  if (options.steps < 0 || options.accuracy_window < 1) throw std::invalid_argument("pipeline: bad step settings");

  std::unique_ptr<PpoTrainer> ppo;
  if (flavor != Flavor::two_step) ppo = std::make_unique<PpoTrainer>(*teacher, *critic, options.ppo);
  std::vector<Distiller> distillers;
  distillers.reserve(students.size());
  for (std::size_t i = 0; i < students.size(); ++i) distillers.emplace_back(*students[i], options.students[i]);

  std::unique_ptr<TrajectoryWriter> writer;
  if (!options.trajectory_dir.empty()) {
    writer = std::make_unique<TrajectoryWriter>(
        options.trajectory_dir, options.store_top_k <= 0 ? sampler.vocab_size() : options.store_top_k,
        nlohmann::json{{"seed", options.seed}});
  }

  PipelineResult result;
  std::deque<double> window;
  int stop_at = options.steps;
  for (int step = 0; step < stop_at; ++step) {
    const auto instances = training_instances(options, step);
    RolloutOptions ro;
    ro.temperature = options.ppo.temperature;
    ro.max_new_tokens = options.ppo.max_new_tokens;
    ro.top_k = options.store_top_k;
    ro.jobs = options.jobs;
    ro.tag = std::string(flavor == Flavor::two_step ? "final" : "step") + std::to_string(step);
    const auto trajectories = sample_trajectories(
        sampler, vocab, instances, ro,
        derive_seed({options.seed, static_cast<std::uint64_t>(SeedPurpose::rollout), static_cast<std::uint64_t>(step)}));
    if (writer) {
      for (const auto& t : trajectories) writer->append(t);
      writer->flush();
    }

    StepRecord rec;
    rec.step = step;
    for (const auto& t : trajectories) {
      rec.sample_reward += t.reward;
      rec.sample_accuracy += t.reward >= 1.0f ? 1.0 : 0.0;
    }
    rec.sample_reward /= static_cast<double>(trajectories.size());
    rec.sample_accuracy /= static_cast<double>(trajectories.size());
    if (ppo) {
      rec.has_ppo = true;
      rec.ppo = ppo->update(trajectories);
    }
    for (auto& d : distillers) rec.students.push_back(d.step(trajectories));

    result.samples += static_cast<long>(trajectories.size());
    rec.samples = result.samples;
    window.push_back(rec.sample_accuracy);
    if (static_cast<int>(window.size()) > options.accuracy_window) window.pop_front();
    rec.rolling_accuracy = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
    if (result.target_step < 0 && static_cast<int>(window.size()) == options.accuracy_window &&
        rec.rolling_accuracy >= options.target_accuracy) {
      result.target_step = step;
      if (options.extra_steps >= 0) stop_at = std::min(stop_at, step + 1 + options.extra_steps);
    }
    result.steps_run = step + 1;
    if (on_step) on_step(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j{{"step", step},
                   {"samples", samples},
                   {"sample_accuracy", sample_accuracy},
                   {"sample_reward", sample_reward},
                   {"rolling_accuracy", rolling_accuracy}};
  if (has_ppo) j["ppo"] = ppo_json(ppo);
  auto s = nlohmann::json::array();
  for (const auto& d : students) s.push_back({{"loss", d.loss}, {"grad_norm", d.grad_norm}, {"tokens", d.tokens}});
  j["students"] = s;
  return j;
}

std::vector<tasks::TaskInstance> training_instances(const PipelineOptions& options, int step) {
  std::vector<tasks::TaskInstance> out;
  out.reserve(static_cast<std::size_t>(options.ppo.batch));
  for (int i = 0; i < options.ppo.batch; ++i) {
    out.push_back(tasks::generate(options.tasks, train_task_seed(options.seed, SeedPurpose::train_tasks,
                                                                 static_cast<std::uint64_t>(step),
                                                                 static_cast<std::uint64_t>(i))));
  }
  return out;
}

PipelineResult train_teacher(model::Transformer& teacher, model::Transformer& critic, const model::Vocabulary& vocab,
                             const PipelineOptions& options, const StepCallback& on_step) {
  PipelineOptions o = options;
  o.students.clear();
  return run(&teacher, teacher, &critic, {}, vocab, o, on_step, Flavor::teacher);
}

PipelineResult joint_rl_distill(model::Transformer& teacher, model::Transformer& critic,
                                std::vector<model::Transformer*> students, const model::Vocabulary& vocab,
                                const PipelineOptions& options, const StepCallback& on_step) {
  return run(&teacher, teacher, &critic, std::move(students), vocab, options, on_step, Flavor::joint);
}

PipelineResult two_step_distill(const model::Transformer& teacher, std::vector<model::Transformer*> students,
                                const model::Vocabulary& vocab, const PipelineOptions& options,
                                const StepCallback& on_step) {
  return run(nullptr, teacher, nullptr, std::move(students), vocab, options, on_step, Flavor::two_step);
}

}  // namespace bcr::training
