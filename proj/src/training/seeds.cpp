#include "bcr/training/seeds.hpp"

namespace bcr::training {

namespace {

constexpr std::uint64_t kTopBit = 1ULL << 63;

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = splitmix(h ^ splitmix(p));
  return h;
}

std::uint64_t train_task_seed(std::uint64_t run_seed, SeedPurpose purpose, std::uint64_t step, std::uint64_t index) {
  return derive_seed({run_seed, static_cast<std::uint64_t>(purpose), step, index}) & ~kTopBit;
}

std::uint64_t eval_task_seed(std::uint64_t index) { return kTopBit | index; }

}  // namespace bcr::training
