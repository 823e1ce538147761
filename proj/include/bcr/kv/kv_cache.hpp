#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcr::kv {

enum class EntryTag : std::uint8_t { question, generation, beacon, sink };

const char* tag_name(EntryTag tag);

class KvCacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CacheStats {
  long entries_now = 0;
  long peak_entries = 0;
  long appends_total = 0;
  long evictions_total = 0;
};

/// Keys and values for one new token, one [width] row per layer.
struct LayerEntries {
  std::vector<std::vector<float>> keys;
  std::vector<std::vector<float>> values;
};

/// Per-layer key/value store. Entries carry the position index they were
/// encoded at; eviction compacts storage but never renumbers positions, so
/// rotary keys written earlier stay valid.
class KvCache {
 public:
  KvCache() = default;
  KvCache(int n_layers, int n_heads, int head_dim);

  int n_layers() const { return n_layers_; }
  int n_heads() const { return n_heads_; }
  int head_dim() const { return head_dim_; }
  int width() const { return n_heads_ * head_dim_; }
  int size() const { return static_cast<int>(positions_.size()); }
  bool empty() const { return positions_.empty(); }

  const std::vector<int>& positions() const { return positions_; }
  const std::vector<EntryTag>& tags() const { return tags_; }
  /// Highest retained position, or -1 when empty.
  int last_position() const { return positions_.empty() ? -1 : positions_.back(); }

  /// [size, width] row-major.
  std::span<const float> keys(int layer) const;
  std::span<const float> values(int layer) const;

  const CacheStats& stats() const { return stats_; }

  /// Appends one entry to every layer. Throws when `position` does not
  /// exceed the last retained position or the row widths are wrong.
  void append(const LayerEntries& entries, int position, EntryTag tag);

  /// KV[:-n-1] + KV[-1]: drops the n entries just before the final one,
  /// which must be a beacon.
  void evict_suffix_keep_last(int n);

  /// Removes the given slots (any order, no duplicates) from every layer.
  void evict_slots(std::vector<int> slots);

  /// One JSON object: {"positions": [...], "tags": [...]} for layer 0.
  std::string debug_line() const;
  void dump_debug(std::ostream& os) const;

 private:
  void check_layer(int layer) const;
  void keep_only(const std::vector<std::uint8_t>& keep);

  int n_layers_ = 0;
  int n_heads_ = 0;
  int head_dim_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
  std::vector<int> positions_;
  std::vector<EntryTag> tags_;
  CacheStats stats_;
};

}  // namespace bcr::kv
