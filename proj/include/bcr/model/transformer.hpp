#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bcr/kv/kv_cache.hpp"
#include "bcr/nn/attention.hpp"
#include "bcr/nn/checkpoint.hpp"
#include "bcr/nn/tensor.hpp"
#include "json.hpp"

namespace bcr::model {

enum class PositionEncoding { rotary, learned_absolute };
enum class Role { teacher, student, critic };

const char* role_name(Role role);
Role role_from_name(const std::string& name);

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 102;
  int max_positions = 1024;
  PositionEncoding position_encoding = PositionEncoding::rotary;
  float rope_theta = 10000.0f;
  /// Token id whose logit is forced to -inf at the output (-1: none).
  int beacon_id = 2;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Parameters a model of this config carries (value head included for critics).
long parameter_count(const ModelConfig& config, Role role);

/// Anything that can advance one token over a KV cache: the transformer, and
/// scripted stand-ins in tests.
class StepPolicy {
 public:
  virtual ~StepPolicy() = default;
  virtual kv::KvCache make_cache() const = 0;
  virtual int vocab_size() const = 0;
  /// Encodes `token` at `position`, appends its entries to `cache` and returns
  /// next-token logits. When `attention` is given it receives, for every cache
  /// entry after the append, the new query's softmax weight averaged over
  /// heads and layers.
  virtual std::vector<float> step(int token, int position, kv::EntryTag tag, kv::KvCache& cache,
                                  std::vector<float>* attention = nullptr) const = 0;
};

/// One sequence of a packed batch. Empty positions mean 0..n-1; a null
/// mask means plain causal.
struct SequenceView {
  std::span<const int> tokens;
  std::span<const int> positions;
  const nn::AttentionMask* mask = nullptr;
};

/// Pre-norm decoder-only transformer: RMSNorm, fused QKV, rotary or learned
/// positions, GELU MLP, no biases, LM head tied to the token embedding.
/// Critics swap the LM head for a scalar value head.
class Transformer final : public StepPolicy {
 public:
  Transformer(ModelConfig config, Role role, std::uint64_t seed);
  Transformer(ModelConfig config, Role role, std::vector<nn::NamedTensor> params);

  /// Copy of `source` weights with a new role. A critic gets a freshly
  /// initialized value head; an LM role drops it.
  static Transformer derive(const Transformer& source, Role role, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Role role() const { return role_; }

  const std::vector<nn::NamedTensor>& named_parameters() const { return params_; }
  std::vector<nn::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  const nn::Tensor& parameter(const std::string& name) const;
  /// Deep copy with gradients detached.
  Transformer clone() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  /// Final-norm hidden states for packed sequences, [total_len, d_model].
  nn::Tensor hidden_states(std::span<const SequenceView> batch) const;
  /// LM logits from hidden states with the beacon logit at -inf.
  nn::Tensor lm_logits(const nn::Tensor& hidden) const;
  /// Critic values from hidden states, [rows].
  nn::Tensor values(const nn::Tensor& hidden) const;

  /// Logits for one sequence, [len, vocab]; positions 0..len-1.
  nn::Tensor forward_full(std::span<const int> tokens, const nn::AttentionMask* mask = nullptr) const;

  kv::KvCache make_cache() const override;
  int vocab_size() const override { return config_.vocab_size; }
  std::vector<float> step(int token, int position, kv::EntryTag tag, kv::KvCache& cache,
                          std::vector<float>* attention = nullptr) const override;

  void save(const std::filesystem::path& dir, nlohmann::json extra = {}) const;
  static Transformer load(const std::filesystem::path& dir);

 private:
  void index_parameters();
  const nn::Tensor& p(int index) const { return params_[static_cast<std::size_t>(index)].tensor; }

  struct LayerIndex {
    int attn_norm, wqkv, wo, ffn_norm, w1, w2;
  };

  ModelConfig config_;
  Role role_;
  std::vector<nn::NamedTensor> params_;
  int tok_emb_ = -1, pos_emb_ = -1, final_norm_ = -1, value_head_ = -1;
  std::vector<LayerIndex> layers_;
};

/// Token id from logits: argmax (lowest id on ties) at temperature 0,
/// otherwise a draw from softmax(logits / temperature). Throws when every
/// logit is -inf or temperature is negative.
int sample(std::span<const float> logits, float temperature, std::mt19937_64& rng);

/// Log-softmax of logits / temperature (temperature 0 treated as 1).
std::vector<float> log_softmax(std::span<const float> logits, float temperature = 1.0f);

struct TokenLogProb {
  int id;
  float logp;
};

/// The k most probable ids by descending probability (ties: lower id first),
/// skipping ids with zero probability.
std::vector<TokenLogProb> top_k(std::span<const float> logprobs, int k);

}  // namespace bcr::model
