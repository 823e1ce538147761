#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bcr/kv/kv_cache.hpp"
#include "bcr/model/transformer.hpp"
#include "bcr/nn/attention.hpp"

namespace bcr::compression {

enum class Mode { breadcrumbs, tova, streaming, none };

const char* mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct CompressionRule {
  int ratio_c = 2;
  int beacon_id = 2;
  Mode mode = Mode::breadcrumbs;

  void validate() const;
};

/// Entries a budget-matched baseline may hold after t generated tokens:
/// question_len + c + floor(t / c).
long budget(int question_len, int ratio_c, long generated);

struct Limits {
  /// Total cache entries (prompt included); <= 0 means unlimited.
  long max_cache = 1000;
  /// Sampled tokens (stop token included); <= 0 means unlimited.
  long max_tokens = 1000;
};

enum class StopReason { stop_token, cache_limit, length_limit };
const char* stop_reason_name(StopReason r);

enum class TraceEventKind { sample, beacon, evict, stop };
const char* trace_event_name(TraceEventKind k);

struct TraceEvent {
  long step = 0;
  int token = -1;
  long entries_now = 0;
  TraceEventKind event = TraceEventKind::sample;
};

struct GenerationOptions {
  float temperature = 1.0f;
  int stop_id = 1;
  /// When non-empty, these tokens replace sampling (teacher forcing). The
  /// episode ends when they run out.
  std::span<const int> forced_tokens;
  /// Keep the logits each sampled token was drawn from.
  bool record_logits = false;
};

struct GenerationResult {
  std::vector<int> tokens;
  StopReason stopped_by = StopReason::length_limit;
  /// Cache counters after each sampled token has been handled (one per token).
  std::vector<kv::CacheStats> cache_trace;
  std::vector<TraceEvent> events;
  /// Logits each token was drawn from, when requested.
  std::vector<std::vector<float>> logits;
  long peak_entries = 0;
  int question_len = 0;
  /// Positions held by the cache when the episode ended.
  std::vector<int> final_positions;

  void write_trace(std::ostream& os) const;
};

/// Runs one episode of `rule.mode` over a fresh cache.
/// breadcrumbs: sample x_i; on stop, end. When i > 0 and i % c == 0, encode
/// the beacon and evict the c window entries before it, then encode x_i.
/// tova: before each write that would exceed budget(t), drop the entry the
/// latest query attended to least (mean over heads and layers; lowest slot
/// on ties).
/// streaming: the question is a fixed sink; generation entries form a window
/// of c + floor(t / c), oldest evicted first.
/// none: plain generation.
/// Every mode stops when a write would take the cache past limits.max_cache
/// (a stop token on that step wins) or after limits.max_tokens tokens.
GenerationResult generate(const model::StepPolicy& policy, std::span<const int> prompt,
                          const CompressionRule& rule, const Limits& limits,
                          const GenerationOptions& options, std::mt19937_64& rng);

GenerationResult breadcrumbs_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                                      const CompressionRule& rule, const Limits& limits,
                                      const GenerationOptions& options, std::mt19937_64& rng);
GenerationResult tova_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                               const CompressionRule& rule, const Limits& limits,
                               const GenerationOptions& options, std::mt19937_64& rng);
GenerationResult streaming_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                                    const CompressionRule& rule, const Limits& limits,
                                    const GenerationOptions& options, std::mt19937_64& rng);

enum class SlotKind { question, generation, beacon };

/// Training-time view of a compressed episode: question, then windows of c
/// generated tokens each followed by a beacon slot once the window is full.
struct BreadcrumbsLayout {
  int question_len = 0;
  int gen_len = 0;
  int ratio_c = 0;
  std::vector<SlotKind> kinds;
  /// Slot holding generated token j as input.
  std::vector<int> gen_slots;
  nn::AttentionMask mask;

  int size() const { return static_cast<int>(kinds.size()); }
  /// Row whose logits predict generated token j (j may equal gen_len).
  int predict_row(int j) const { return j == 0 ? question_len - 1 : gen_slots[static_cast<std::size_t>(j - 1)]; }
  /// Input ids for the layout, with `beacon_id` at beacon slots.
  std::vector<int> interleave(std::span<const int> prompt, std::span<const int> generated, int beacon_id) const;
};

/// Generation rows see the question, earlier beacons, and their own window
/// up to themselves; a beacon row sees the question, earlier beacons, its
/// whole window and itself.
BreadcrumbsLayout build_breadcrumbs_mask(int question_len, int gen_len, int ratio_c);

}  // namespace bcr::compression
