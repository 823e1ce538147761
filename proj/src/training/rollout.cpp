#include "bcr/training/rollout.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "bcr/training/seeds.hpp"

namespace bcr::training {

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::string response_text(const model::Vocabulary& vocab, std::span<const int> tokens) {
  if (!tokens.empty() && tokens.back() == vocab.stop()) tokens = tokens.first(tokens.size() - 1);
  return vocab.detokenize(tokens);
}

std::vector<Trajectory> sample_trajectories(const model::Transformer& policy, const model::Vocabulary& vocab,
                                            std::span<const tasks::TaskInstance> instances,
                                            const RolloutOptions& options, std::uint64_t seed) {
  const int k = options.top_k <= 0 ? policy.vocab_size() : options.top_k;
  compression::CompressionRule rule;
  rule.mode = compression::Mode::none;
  rule.beacon_id = vocab.beacon();
  compression::Limits limits;
  limits.max_cache = 0;
  limits.max_tokens = options.max_new_tokens;
  compression::GenerationOptions gen;
  gen.temperature = options.temperature;
  gen.stop_id = vocab.stop();
  gen.record_logits = true;

  std::vector<Trajectory> out(instances.size());
  parallel_for(static_cast<int>(instances.size()), options.jobs, [&](int i) {
    const auto& inst = instances[static_cast<std::size_t>(i)];
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(SeedPurpose::rollout), static_cast<std::uint64_t>(i)}));
    Trajectory t;
    t.prompt = vocab.tokenize(inst.prompt_text);
    auto result = compression::generate(policy, t.prompt, rule, limits, gen, rng);
    t.tokens = std::move(result.tokens);
    t.topk.reserve(t.tokens.size());
    t.sampled_logp.reserve(t.tokens.size());
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      // The stored distribution is the one the token was drawn from.
      const auto logp = model::log_softmax(result.logits[j], options.temperature);
      t.sampled_logp.push_back(logp[static_cast<std::size_t>(t.tokens[j])]);
      t.topk.push_back(model::top_k(logp, k));
    }
    t.reward = static_cast<float>(tasks::score(inst, response_text(vocab, t.tokens)));
    t.teacher_tag = options.tag;
    t.task_seed = inst.seed;
    out[static_cast<std::size_t>(i)] = std::move(t);
  });
  return out;
}

}  // namespace bcr::training
