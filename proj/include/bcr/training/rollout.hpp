#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bcr/compression/controller.hpp"
#include "bcr/model/transformer.hpp"
#include "bcr/model/vocab.hpp"
#include "bcr/tasks/tasks.hpp"
#include "bcr/training/trajectory.hpp"

namespace bcr::training {

struct RolloutOptions {
  float temperature = 1.0f;
  int max_new_tokens = 128;
  /// Teacher support stored per token; 0 keeps the whole vocabulary.
  int top_k = 0;
  /// Worker threads; episodes are independent and individually seeded, so
  /// results do not depend on this.
  int jobs = 1;
  std::string tag;
};

/// Plain (uncompressed) sampling of one episode per instance, scored by the
/// task verifier. Episode i draws from a generator seeded by (seed, i).
std::vector<Trajectory> sample_trajectories(const model::Transformer& policy, const model::Vocabulary& vocab,
                                            std::span<const tasks::TaskInstance> instances,
                                            const RolloutOptions& options, std::uint64_t seed);

/// Response text of generated ids with a trailing stop token dropped.
std::string response_text(const model::Vocabulary& vocab, std::span<const int> tokens);

/// Runs fn(i) for i in [0, n) over `jobs` threads; the first exception is
/// rethrown after all workers finish.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace bcr::training
