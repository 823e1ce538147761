#pragma once

#include <cstdint>
#include <initializer_list>

namespace bcr::training {

/// SplitMix64 finalizer folded over `parts`.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

enum class SeedPurpose : std::uint64_t { sft = 1, train_tasks = 2, rollout = 3, init = 4, eval_sampling = 5 };

/// Task seeds used for training always have the top bit clear; held-out
/// seeds from eval_task_seed always have it set, so the two never meet.
std::uint64_t train_task_seed(std::uint64_t run_seed, SeedPurpose purpose, std::uint64_t step, std::uint64_t index);
std::uint64_t eval_task_seed(std::uint64_t index);

}  // namespace bcr::training
