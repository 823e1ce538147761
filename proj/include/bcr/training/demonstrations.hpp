#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>

#include "bcr/model/transformer.hpp"
#include "bcr/model/vocab.hpp"
#include "bcr/tasks/tasks.hpp"
#include "bcr/training/config.hpp"

namespace bcr::training {

/// Scripted response text for `instance` (without the stop token).
///   stargraph: walks back from a leaf edge by edge, then answers the path,
///     e.g. "1->7,5->1.<answer>[5, 1, 7]</answer>"; with correct = false the
///     walk starts from some other leaf.
///   countdown: the answer tag around a solving expression, or around a
///     random combination of the numbers.
///   linsys: the solution list, or one with a component off by one.
std::string demonstration(const tasks::TaskInstance& instance, bool correct, std::mt19937_64& rng);

/// A random digit string as prompt ("R:<digits>|") and the same digits as
/// the response.
std::pair<std::string, std::string> copy_drill(std::mt19937_64& rng);

struct SftProgress {
  int step = 0;
  double loss = 0.0;
};

/// Teacher-forced next-token training on demonstrations of freshly drawn
/// instances; only response tokens (stop included) carry loss.
/// Returns the mean loss of the last step.
double sft_train(model::Transformer& model, const model::Vocabulary& vocab, const tasks::TaskConfig& tasks,
                 const SftConfig& config, std::uint64_t seed,
                 const std::function<void(const SftProgress&)>& on_step = {});

}  // namespace bcr::training
