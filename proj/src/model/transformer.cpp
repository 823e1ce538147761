#include "bcr/model/transformer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bcr/nn/ops.hpp"

namespace bcr::model {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXf>;
using VectorMap = Eigen::Map<Eigen::VectorXf>;

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

const char* encoding_name(PositionEncoding e) {
  return e == PositionEncoding::rotary ? "rotary" : "learned_absolute";
}

PositionEncoding encoding_from_name(const std::string& s) {
  if (s == "rotary") return PositionEncoding::rotary;
  if (s == "learned_absolute") return PositionEncoding::learned_absolute;
  throw std::invalid_argument("unknown position_encoding '" + s + "' (rotary|learned_absolute)");
}

nn::Tensor normal_tensor(nn::Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> v(nn::shape_numel(shape));
  for (float& x : v) x = dist(rng);
  return nn::Tensor::from(std::move(shape), std::move(v), true);
}

void rms_norm_row(const float* x, const float* w, float* y, int n) {
  double ss = 0.0;
  for (int c = 0; c < n; ++c) ss += static_cast<double>(x[c]) * x[c];
  const float inv = 1.0f / std::sqrt(static_cast<float>(ss / n) + 1e-5f);
  for (int c = 0; c < n; ++c) y[c] = x[c] * inv * w[c];
}

float gelu_value(float v) {
  constexpr float k0 = 0.7978845608028654f;
  constexpr float k1 = 0.044715f;
  return 0.5f * v * (1.0f + std::tanh(k0 * (v + k1 * v * v * v)));
}

}  // namespace

const char* role_name(Role role) {
  switch (role) {
    case Role::teacher: return "teacher";
    case Role::student: return "student";
    case Role::critic: return "critic";
  }
  return "?";
}

Role role_from_name(const std::string& name) {
  if (name == "teacher") return Role::teacher;
  if (name == "student") return Role::student;
  if (name == "critic") return Role::critic;
  throw std::invalid_argument("unknown role '" + name + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("ModelConfig.") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_positions, "max_positions");
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (position_encoding == PositionEncoding::rotary && head_dim() % 2 != 0) {
    throw std::invalid_argument("ModelConfig: rotary encoding needs an even head_dim");
  }
  if (beacon_id >= vocab_size) throw std::invalid_argument("ModelConfig: beacon_id outside vocabulary");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},       {"n_heads", n_heads},
          {"d_model", d_model},         {"d_ff", d_ff},
          {"vocab_size", vocab_size},   {"max_positions", max_positions},
          {"position_encoding", encoding_name(position_encoding)},
          {"rope_theta", rope_theta},   {"beacon_id", beacon_id}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.position_encoding = encoding_from_name(j.value("position_encoding", std::string("rotary")));
  c.rope_theta = j.value("rope_theta", c.rope_theta);
  c.beacon_id = j.value("beacon_id", c.beacon_id);
  c.validate();
  return c;
}

long parameter_count(const ModelConfig& c, Role role) {
  const long d = c.d_model;
  long n = static_cast<long>(c.vocab_size) * d + d;  // tok_emb, final_norm
  if (c.position_encoding == PositionEncoding::learned_absolute) n += static_cast<long>(c.max_positions) * d;
  n += c.n_layers * (2 * d + 3 * d * d + d * d + 2 * d * c.d_ff);
  if (role == Role::critic) n += d;
  return n;
}

Transformer::Transformer(ModelConfig config, Role role, std::uint64_t seed)
    : config_(config), role_(role) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.d_model;
  const float std_proj = 0.02f / std::sqrt(2.0f * static_cast<float>(config_.n_layers));
  auto ones = [](int n) { return nn::Tensor::full({n}, 1.0f, true); };
  params_.push_back({"tok_emb", normal_tensor({config_.vocab_size, d}, 0.02f, rng)});
  if (config_.position_encoding == PositionEncoding::learned_absolute) {
    params_.push_back({"pos_emb", normal_tensor({config_.max_positions, d}, 0.02f, rng)});
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    params_.push_back({pre + "attn_norm", ones(d)});
    params_.push_back({pre + "wqkv", normal_tensor({d, 3 * d}, 0.02f, rng)});
    params_.push_back({pre + "wo", normal_tensor({d, d}, std_proj, rng)});
    params_.push_back({pre + "ffn_norm", ones(d)});
    params_.push_back({pre + "w1", normal_tensor({d, config_.d_ff}, 0.02f, rng)});
    params_.push_back({pre + "w2", normal_tensor({config_.d_ff, d}, std_proj, rng)});
  }
  params_.push_back({"final_norm", ones(d)});
  if (role_ == Role::critic) params_.push_back({"value_head", normal_tensor({d, 1}, 0.02f, rng)});
  index_parameters();
}

Transformer::Transformer(ModelConfig config, Role role, std::vector<nn::NamedTensor> params)
    : config_(config), role_(role), params_(std::move(params)) {
  config_.validate();
  index_parameters();
  Transformer reference_shapes(config_, role_, 0);
  if (reference_shapes.params_.size() != params_.size()) {
    throw std::invalid_argument("Transformer: expected " + std::to_string(reference_shapes.params_.size()) +
                                " parameters for role " + role_name(role_) + ", got " +
                                std::to_string(params_.size()));
  }
  for (const auto& ref : reference_shapes.params_) {
    const auto& mine = parameter(ref.name);
    if (mine.shape() != ref.tensor.shape()) {
      throw nn::ShapeError("Transformer(" + ref.name + ")", {mine.shape(), ref.tensor.shape()});
    }
  }
}

void Transformer::index_parameters() {
  layers_.assign(static_cast<std::size_t>(config_.n_layers), LayerIndex{-1, -1, -1, -1, -1, -1});
  for (int i = 0; i < static_cast<int>(params_.size()); ++i) {
    const std::string& name = params_[static_cast<std::size_t>(i)].name;
    if (name == "tok_emb") tok_emb_ = i;
    else if (name == "pos_emb") pos_emb_ = i;
    else if (name == "final_norm") final_norm_ = i;
    else if (name == "value_head") value_head_ = i;
    else if (name.size() > 1 && name[0] == 'l') {
      const auto dot = name.find('.');
      const int l = std::stoi(name.substr(1, dot - 1));
      if (l < 0 || l >= config_.n_layers) throw std::invalid_argument("Transformer: stray parameter " + name);
      const std::string field = name.substr(dot + 1);
      auto& li = layers_[static_cast<std::size_t>(l)];
      if (field == "attn_norm") li.attn_norm = i;
      else if (field == "wqkv") li.wqkv = i;
      else if (field == "wo") li.wo = i;
      else if (field == "ffn_norm") li.ffn_norm = i;
      else if (field == "w1") li.w1 = i;
      else if (field == "w2") li.w2 = i;
      else throw std::invalid_argument("Transformer: unknown parameter " + name);
    } else {
      throw std::invalid_argument("Transformer: unknown parameter " + name);
    }
  }
  if (tok_emb_ < 0 || final_norm_ < 0) throw std::invalid_argument("Transformer: missing embedding or final norm");
}

Transformer Transformer::derive(const Transformer& source, Role role, std::uint64_t seed) {
  std::vector<nn::NamedTensor> params;
  for (const auto& np : source.params_) {
    if (np.name == "value_head") continue;
    params.push_back({np.name, nn::Tensor::from(np.tensor.shape(),
                                                std::vector<float>(np.tensor.data().begin(), np.tensor.data().end()),
                                                true)});
  }
  if (role == Role::critic) {
    std::mt19937_64 rng(seed);
    params.push_back({"value_head", normal_tensor({source.config_.d_model, 1}, 0.02f, rng)});
  }
  return Transformer(source.config_, role, std::move(params));
}

std::vector<nn::Tensor> Transformer::parameters() const {
  std::vector<nn::Tensor> out;
  for (const auto& np : params_) out.push_back(np.tensor);
  return out;
}

std::vector<std::string> Transformer::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& np : params_) out.push_back(np.name);
  return out;
}

const nn::Tensor& Transformer::parameter(const std::string& name) const {
  for (const auto& np : params_) {
    if (np.name == name) return np.tensor;
  }
  throw std::invalid_argument("Transformer: no parameter named " + name);
}

Transformer Transformer::clone() const {
  std::vector<nn::NamedTensor> params;
  for (const auto& np : params_) {
    auto t = np.tensor.clone();
    t.set_requires_grad(np.tensor.requires_grad());
    params.push_back({np.name, t});
  }
  return Transformer(config_, role_, std::move(params));
}

void Transformer::set_requires_grad(bool flag) {
  for (auto& np : params_) np.tensor.set_requires_grad(flag);
}

void Transformer::zero_grad() {
  for (auto& np : params_) np.tensor.zero_grad();
}

nn::Tensor Transformer::hidden_states(std::span<const SequenceView> batch) const {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<nn::AttentionSegment> segments;
  for (const auto& seq : batch) {
    const int len = static_cast<int>(seq.tokens.size());
    if (!seq.positions.empty() && static_cast<int>(seq.positions.size()) != len) {
      throw nn::ShapeError("hidden_states", {{len}, {static_cast<int>(seq.positions.size())}},
                           "positions length differs from tokens");
    }
    if (seq.mask) {
      if (seq.mask->size() != len) {
        throw nn::ShapeError("hidden_states", {{len}, {seq.mask->size(), seq.mask->size()}},
                             "attention mask does not match sequence length");
      }
      if (!seq.mask->is_lower_triangular()) {
        throw std::invalid_argument("hidden_states: attention mask lets a token see the future");
      }
    }
    segments.push_back({static_cast<int>(tokens.size()), len, seq.mask});
    tokens.insert(tokens.end(), seq.tokens.begin(), seq.tokens.end());
    for (int i = 0; i < len; ++i) {
      const int pos = seq.positions.empty() ? i : seq.positions[static_cast<std::size_t>(i)];
      if (pos < 0 || pos >= config_.max_positions) {
        throw std::out_of_range("hidden_states: position " + std::to_string(pos) +
                                " exceeds max_positions " + std::to_string(config_.max_positions));
      }
      positions.push_back(pos);
    }
  }
  const int d = config_.d_model;
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) throw std::out_of_range("hidden_states: token id " + std::to_string(t));
  }
  nn::Tensor x = nn::embedding(p(tok_emb_), tokens);
  if (pos_emb_ >= 0) x = nn::add(x, nn::embedding(p(pos_emb_), positions));
  const bool rotary = config_.position_encoding == PositionEncoding::rotary;
  for (const auto& li : layers_) {
    nn::Tensor h = nn::rms_norm(x, p(li.attn_norm));
    nn::Tensor qkv = nn::matmul(h, p(li.wqkv));
    nn::Tensor q = nn::slice(qkv, 1, 0, d);
    nn::Tensor k = nn::slice(qkv, 1, d, 2 * d);
    nn::Tensor v = nn::slice(qkv, 1, 2 * d, 3 * d);
    if (rotary) {
      q = nn::rope(q, positions, config_.n_heads, config_.rope_theta);
      k = nn::rope(k, positions, config_.n_heads, config_.rope_theta);
    }
    nn::Tensor att = nn::attention(q, k, v, config_.n_heads, segments);
    x = nn::add(x, nn::matmul(att, p(li.wo)));
    nn::Tensor f = nn::gelu(nn::matmul(nn::rms_norm(x, p(li.ffn_norm)), p(li.w1)));
    x = nn::add(x, nn::matmul(f, p(li.w2)));
  }
  return nn::rms_norm(x, p(final_norm_));
}

nn::Tensor Transformer::lm_logits(const nn::Tensor& hidden) const {
  nn::Tensor logits = nn::matmul(hidden, p(tok_emb_), /*transpose_b=*/true);
  if (config_.beacon_id >= 0) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(config_.vocab_size), 0);
    mask[static_cast<std::size_t>(config_.beacon_id)] = 1;
    logits = nn::masked_fill(logits, mask, {config_.vocab_size}, kNegInf);
  }
  return logits;
}

nn::Tensor Transformer::values(const nn::Tensor& hidden) const {
  if (value_head_ < 0) throw std::logic_error("values: model has no value head (role " + std::string(role_name(role_)) + ")");
  nn::Tensor v = nn::matmul(hidden, p(value_head_));
  return nn::reshape(v, {v.dim(0)});
}

nn::Tensor Transformer::forward_full(std::span<const int> tokens, const nn::AttentionMask* mask) const {
  const SequenceView seq{tokens, {}, mask};
  return lm_logits(hidden_states(std::span<const SequenceView>(&seq, 1)));
}

kv::KvCache Transformer::make_cache() const {
  return kv::KvCache(config_.n_layers, config_.n_heads, config_.head_dim());
}

std::vector<float> Transformer::step(int token, int position, kv::EntryTag tag, kv::KvCache& cache,
                                     std::vector<float>* attention) const {
  if (role_ == Role::critic) throw std::logic_error("step: critic models have no LM head");
  if (cache.n_layers() != config_.n_layers || cache.n_heads() != config_.n_heads ||
      cache.head_dim() != config_.head_dim()) {
    throw kv::KvCacheError("step: cache has " + std::to_string(cache.n_layers()) + " layers x " +
                           std::to_string(cache.n_heads()) + " heads, model has " +
                           std::to_string(config_.n_layers) + " x " + std::to_string(config_.n_heads));
  }
  if (token < 0 || token >= config_.vocab_size) throw std::out_of_range("step: token id " + std::to_string(token));
  if (position < 0 || position >= config_.max_positions) {
    throw std::out_of_range("step: position " + std::to_string(position) + " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const int d = config_.d_model;
  const int heads = config_.n_heads;
  const int hd = config_.head_dim();
  const int n_old = cache.size();
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

  Eigen::VectorXf x = ConstVectorMap(p(tok_emb_).data().data() + static_cast<std::size_t>(token) * d, d);
  if (pos_emb_ >= 0) x += ConstVectorMap(p(pos_emb_).data().data() + static_cast<std::size_t>(position) * d, d);
  if (attention) attention->assign(static_cast<std::size_t>(n_old + 1), 0.0f);

  kv::LayerEntries entries;
  Eigen::VectorXf h(d), att(d), scores(n_old + 1);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& li = layers_[static_cast<std::size_t>(l)];
    rms_norm_row(x.data(), p(li.attn_norm).data().data(), h.data(), d);
    Eigen::VectorXf qkv = ConstMatrixMap(p(li.wqkv).data().data(), d, 3 * d).transpose() * h;
    std::vector<float> q(qkv.data(), qkv.data() + d);
    std::vector<float> k(qkv.data() + d, qkv.data() + 2 * d);
    std::vector<float> v(qkv.data() + 2 * d, qkv.data() + 3 * d);
    if (config_.position_encoding == PositionEncoding::rotary) {
      nn::rope_inplace(q, position, heads, config_.rope_theta);
      nn::rope_inplace(k, position, heads, config_.rope_theta);
    }
    const float* keys = cache.keys(l).data();
    const float* vals = cache.values(l).data();
    for (int hh = 0; hh < heads; ++hh) {
      const int off = hh * hd;
      ConstVectorMap qh(q.data() + off, hd);
      float mx = kNegInf;
      for (int j = 0; j < n_old; ++j) {
        scores[j] = qh.dot(ConstVectorMap(keys + static_cast<std::size_t>(j) * d + off, hd)) * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      scores[n_old] = qh.dot(ConstVectorMap(k.data() + off, hd)) * inv_sqrt;
      mx = std::max(mx, scores[n_old]);
      double total = 0.0;
      for (int j = 0; j <= n_old; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      const float inv_total = static_cast<float>(1.0 / total);
      auto out = att.segment(off, hd);
      out.setZero();
      for (int j = 0; j < n_old; ++j) {
        scores[j] *= inv_total;
        out += scores[j] * ConstVectorMap(vals + static_cast<std::size_t>(j) * d + off, hd);
      }
      scores[n_old] *= inv_total;
      out += scores[n_old] * ConstVectorMap(v.data() + off, hd);
      if (attention) {
        for (int j = 0; j <= n_old; ++j) (*attention)[static_cast<std::size_t>(j)] += scores[j];
      }
    }
    x += ConstMatrixMap(p(li.wo).data().data(), d, d).transpose() * att;
    rms_norm_row(x.data(), p(li.ffn_norm).data().data(), h.data(), d);
    Eigen::VectorXf f = ConstMatrixMap(p(li.w1).data().data(), d, config_.d_ff).transpose() * h;
    for (int i = 0; i < config_.d_ff; ++i) f[i] = gelu_value(f[i]);
    x += ConstMatrixMap(p(li.w2).data().data(), config_.d_ff, d).transpose() * f;
    entries.keys.push_back(std::move(k));
    entries.values.push_back(std::move(v));
  }
  cache.append(entries, position, tag);
  if (attention) {
    const float norm = 1.0f / static_cast<float>(heads * config_.n_layers);
    for (float& a : *attention) a *= norm;
  }

  rms_norm_row(x.data(), p(final_norm_).data().data(), h.data(), d);
  std::vector<float> logits(static_cast<std::size_t>(config_.vocab_size));
  VectorMap(logits.data(), config_.vocab_size).noalias() =
      ConstMatrixMap(p(tok_emb_).data().data(), config_.vocab_size, d) * h;
  if (config_.beacon_id >= 0) logits[static_cast<std::size_t>(config_.beacon_id)] = kNegInf;
  return logits;
}

void Transformer::save(const std::filesystem::path& dir, nlohmann::json extra) const {
  if (extra.is_null()) extra = nlohmann::json::object();
  extra["model"] = config_.to_json();
  extra["role"] = role_name(role_);
  nn::save_checkpoint(dir, params_, std::move(extra));
}

Transformer Transformer::load(const std::filesystem::path& dir) {
  auto ck = nn::load_checkpoint(dir);
  for (auto& np : ck.params) np.tensor.set_requires_grad(true);
  return Transformer(ModelConfig::from_json(ck.manifest.at("model")),
                     role_from_name(ck.manifest.at("role").get<std::string>()), std::move(ck.params));
}

int sample(std::span<const float> logits, float temperature, std::mt19937_64& rng) {
  if (temperature < 0.0f || std::isnan(temperature)) throw std::invalid_argument("sample: negative temperature");
  int best = -1;
  for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<std::size_t>(i)] == kNegInf) continue;
    if (best < 0 || logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  }
  if (best < 0) throw std::invalid_argument("sample: every logit is -inf");
  if (temperature == 0.0f) return best;
  const float mx = logits[static_cast<std::size_t>(best)];
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = logits[i] == kNegInf ? 0.0 : std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += w[i];
  }
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  int last_positive = best;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    acc += w[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

std::vector<float> log_softmax(std::span<const float> logits, float temperature) {
  const double t = temperature > 0.0f ? temperature : 1.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  if (mx == -std::numeric_limits<double>::infinity()) throw std::invalid_argument("log_softmax: every logit is -inf");
  double total = 0.0;
  for (float v : logits) total += std::exp((v - mx) / t);
  const double lse = std::log(total);
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] == kNegInf ? kNegInf : static_cast<float>((logits[i] - mx) / t - lse);
  }
  return out;
}

std::vector<TokenLogProb> top_k(std::span<const float> logprobs, int k) {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(logprobs.size()); ++i) {
    if (logprobs[static_cast<std::size_t>(i)] != kNegInf) ids.push_back(i);
  }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(keep), ids.end(), [&](int a, int b) {
    const float la = logprobs[static_cast<std::size_t>(a)], lb = logprobs[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  });
  std::vector<TokenLogProb> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back({ids[i], logprobs[static_cast<std::size_t>(ids[i])]});
  return out;
}

}  // namespace bcr::model
