#include "bcr/kv/kv_cache.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"

namespace bcr::kv {

const char* tag_name(EntryTag tag) {
  switch (tag) {
    case EntryTag::question: return "question";
    case EntryTag::generation: return "generation";
    case EntryTag::beacon: return "beacon";
    case EntryTag::sink: return "sink";
  }
  return "?";
}

KvCache::KvCache(int n_layers, int n_heads, int head_dim)
    : n_layers_(n_layers), n_heads_(n_heads), head_dim_(head_dim) {
  if (n_layers <= 0 || n_heads <= 0 || head_dim <= 0) {
    throw KvCacheError("KvCache: layer, head and head_dim counts must be positive");
  }
  keys_.resize(static_cast<std::size_t>(n_layers));
  values_.resize(static_cast<std::size_t>(n_layers));
}

void KvCache::check_layer(int layer) const {
  if (layer < 0 || layer >= n_layers_) {
    throw KvCacheError("KvCache: layer " + std::to_string(layer) + " out of range for " +
                       std::to_string(n_layers_) + " layers");
  }
}

std::span<const float> KvCache::keys(int layer) const {
  check_layer(layer);
  return keys_[static_cast<std::size_t>(layer)];
}

std::span<const float> KvCache::values(int layer) const {
  check_layer(layer);
  return values_[static_cast<std::size_t>(layer)];
}

void KvCache::append(const LayerEntries& entries, int position, EntryTag tag) {
  if (static_cast<int>(entries.keys.size()) != n_layers_ ||
      static_cast<int>(entries.values.size()) != n_layers_) {
    throw KvCacheError("KvCache::append: got " + std::to_string(entries.keys.size()) +
                       " layers of keys, cache has " + std::to_string(n_layers_));
  }
  if (position <= last_position()) {
    throw KvCacheError("KvCache::append: position " + std::to_string(position) +
                       " does not exceed last position " + std::to_string(last_position()));
  }
  const auto w = static_cast<std::size_t>(width());
  for (int l = 0; l < n_layers_; ++l) {
    const auto& k = entries.keys[static_cast<std::size_t>(l)];
    const auto& v = entries.values[static_cast<std::size_t>(l)];
    if (k.size() != w || v.size() != w) {
      throw KvCacheError("KvCache::append: layer " + std::to_string(l) + " row width " +
                         std::to_string(k.size()) + "/" + std::to_string(v.size()) +
                         ", expected " + std::to_string(w));
    }
    auto& ks = keys_[static_cast<std::size_t>(l)];
    auto& vs = values_[static_cast<std::size_t>(l)];
    ks.insert(ks.end(), k.begin(), k.end());
    vs.insert(vs.end(), v.begin(), v.end());
  }
  positions_.push_back(position);
  tags_.push_back(tag);
  ++stats_.appends_total;
  stats_.entries_now = size();
  stats_.peak_entries = std::max(stats_.peak_entries, stats_.entries_now);
}

void KvCache::keep_only(const std::vector<std::uint8_t>& keep) {
  const auto w = static_cast<std::size_t>(width());
  for (int l = 0; l < n_layers_; ++l) {
    auto& ks = keys_[static_cast<std::size_t>(l)];
    auto& vs = values_[static_cast<std::size_t>(l)];
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      if (out != i) {
        std::copy_n(ks.begin() + static_cast<long>(i * w), w, ks.begin() + static_cast<long>(out * w));
        std::copy_n(vs.begin() + static_cast<long>(i * w), w, vs.begin() + static_cast<long>(out * w));
      }
      ++out;
    }
    ks.resize(out * w);
    vs.resize(out * w);
  }
  std::size_t out = 0;
  long removed = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) {
      ++removed;
      continue;
    }
    positions_[out] = positions_[i];
    tags_[out] = tags_[i];
    ++out;
  }
  positions_.resize(out);
  tags_.resize(out);
  stats_.evictions_total += removed;
  stats_.entries_now = size();
}

void KvCache::evict_suffix_keep_last(int n) {
  if (n < 0) throw KvCacheError("evict_suffix_keep_last: negative count");
  if (n == 0) return;
  if (size() < n + 1) {
    throw KvCacheError("evict_suffix_keep_last: need " + std::to_string(n + 1) +
                       " entries, cache holds " + std::to_string(size()));
  }
  if (tags_.back() != EntryTag::beacon) {
    throw KvCacheError("evict_suffix_keep_last: last entry is tagged " +
                       std::string(tag_name(tags_.back())) + ", expected beacon");
  }
  std::vector<std::uint8_t> keep(positions_.size(), 1);
  for (int i = size() - 1 - n; i < size() - 1; ++i) keep[static_cast<std::size_t>(i)] = 0;
  keep_only(keep);
}

void KvCache::evict_slots(std::vector<int> slots) {
  std::vector<std::uint8_t> keep(positions_.size(), 1);
  for (int s : slots) {
    if (s < 0 || s >= size()) {
      throw KvCacheError("evict_slots: slot " + std::to_string(s) + " out of range for " +
                         std::to_string(size()) + " entries");
    }
    if (!keep[static_cast<std::size_t>(s)]) {
      throw KvCacheError("evict_slots: slot " + std::to_string(s) + " listed twice");
    }
    keep[static_cast<std::size_t>(s)] = 0;
  }
  if (!slots.empty()) keep_only(keep);
}

std::string KvCache::debug_line() const {
  nlohmann::json j;
  j["positions"] = positions_;
  auto& tags = j["tags"] = nlohmann::json::array();
  for (EntryTag t : tags_) tags.push_back(tag_name(t));
  return j.dump();
}

void KvCache::dump_debug(std::ostream& os) const { os << debug_line() << '\n'; }

}  // namespace bcr::kv
