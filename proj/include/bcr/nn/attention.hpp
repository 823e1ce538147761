#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bcr/nn/tensor.hpp"

namespace bcr::nn {

/// Square boolean attention pattern: allows(i, j) means query row i may read
/// key column j. Disallowed pairs become -inf ahead of the softmax, so the
/// same object expresses plain causal and compressed (breadcrumbs) patterns.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int size) : size_(size), allowed_(static_cast<std::size_t>(size) * size, 0) {}

  static AttentionMask causal(int size);

  int size() const noexcept { return size_; }
  bool allows(int query, int key) const { return allowed_[index(query, key)] != 0; }
  void set(int query, int key, bool allowed) { allowed_[index(query, key)] = allowed ? 1 : 0; }

  /// Every row permits only keys at or before itself.
  bool is_lower_triangular() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t index(int query, int key) const {
    return static_cast<std::size_t>(query) * static_cast<std::size_t>(size_) + static_cast<std::size_t>(key);
  }

  int size_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// One sequence packed into the rows [offset, offset + length) of q/k/v.
/// A null mask means plain causal.
struct AttentionSegment {
  int offset = 0;
  int length = 0;
  const AttentionMask* mask = nullptr;
};

/// Multi-head scaled dot-product attention over packed sequences.
/// q, k, v are [N, n_heads * head_dim]; rows of different segments never
/// attend to each other. Returns [N, n_heads * head_dim].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                 std::span<const AttentionSegment> segments);

}  // namespace bcr::nn
