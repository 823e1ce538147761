#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bcr/model/transformer.hpp"

namespace bcr::training {

/// One teacher rollout with the teacher's per-token top-k distribution.
struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> tokens;
  /// One list per generated token, by descending probability.
  std::vector<std::vector<model::TokenLogProb>> topk;
  /// Teacher log-probability of each sampled token.
  std::vector<float> sampled_logp;
  float reward = 0.0f;
  std::string teacher_tag;
  std::uint64_t task_seed = 0;

  /// Sum of exp(logp) over the stored support for token j.
  double stored_mass(std::size_t j) const;
};

inline constexpr int kTrajectoryFormatVersion = 1;

// Append-only store:
//   <dir>/trajectories.bin   "BCRTRAJ1", then records of
//                            u32 byte length, payload (see trajectory.cpp)
//   <dir>/trajectories.json  format_version, record count, top_k, extra
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::filesystem::path& dir, int top_k, nlohmann::json extra = {});
  ~TrajectoryWriter();
  TrajectoryWriter(const TrajectoryWriter&) = delete;
  TrajectoryWriter& operator=(const TrajectoryWriter&) = delete;

  void append(const Trajectory& t);
  /// Flushes records and rewrites the sidecar.
  void flush();
  long count() const { return count_; }

 private:
  std::filesystem::path dir_;
  std::ofstream out_;
  int top_k_;
  nlohmann::json extra_;
  long count_ = 0;
};

struct LoadedTrajectories {
  std::vector<Trajectory> trajectories;
  nlohmann::json manifest;
};

LoadedTrajectories load_trajectories(const std::filesystem::path& dir);

}  // namespace bcr::training
