#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "bcr/model/transformer.hpp"
#include "bcr/model/vocab.hpp"

using namespace bcr;
using model::ModelConfig;
using model::Role;
using model::Transformer;

namespace {

ModelConfig small_config(model::PositionEncoding enc = model::PositionEncoding::rotary) {
  return {.n_layers = 2, .n_heads = 2, .d_model = 16, .d_ff = 40, .vocab_size = 30, .max_positions = 64,
          .position_encoding = enc};
}

std::vector<int> random_tokens(std::mt19937_64& rng, int n, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& x : t) x = 3 + static_cast<int>(rng() % static_cast<unsigned>(vocab - 3));
  return t;
}

float max_diff_row(const std::vector<float>& a, const nn::Tensor& full, int row, int vocab) {
  float worst = 0.0f;
  for (int v = 0; v < vocab; ++v) {
    const float x = a[static_cast<std::size_t>(v)];
    const float y = full.at(static_cast<std::size_t>(row * vocab + v));
    if (std::isinf(x) || std::isinf(y)) {
      if (x != y) return std::numeric_limits<float>::infinity();
      continue;
    }
    worst = std::max(worst, std::abs(x - y));
  }
  return worst;
}

}  // namespace

TEST_CASE("explicit causal mask equals the default") {
  Transformer m(small_config(), Role::teacher, 1);
  std::mt19937_64 rng(1);
  auto tokens = random_tokens(rng, 9, 30);
  auto mask = nn::AttentionMask::causal(9);
  auto a = m.forward_full(tokens);
  auto b = m.forward_full(tokens, &mask);
  CHECK(a.shape() == nn::Shape{9, 30});
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("a row that sees only the question and itself ignores other tokens") {
  Transformer m(small_config(), Role::teacher, 2);
  std::mt19937_64 rng(2);
  auto tokens = random_tokens(rng, 10, 30);
  const int q = 3;
  nn::AttentionMask mask = nn::AttentionMask::causal(10);
  for (int j = q; j < 9; ++j) mask.set(9, j, false);
  auto base = m.forward_full(tokens, &mask);
  for (int j = q; j < 9; ++j) {
    auto perturbed = tokens;
    perturbed[static_cast<std::size_t>(j)] = 3 + (perturbed[static_cast<std::size_t>(j)] - 2) % 27;
    auto out = m.forward_full(perturbed, &mask);
    for (int v = 0; v < 30; ++v) {
      const float a = base.at(static_cast<std::size_t>(9 * 30 + v));
      const float b = out.at(static_cast<std::size_t>(9 * 30 + v));
      if (std::isinf(a)) CHECK(a == b);
      else CHECK(std::abs(a - b) <= 1e-7f);
    }
  }
}

TEST_CASE("prompt-only forward yields next-token logits at the last position") {
  Transformer m(small_config(), Role::teacher, 3);
  std::vector<int> prompt{5, 6, 7};
  auto logits = m.forward_full(prompt);
  CHECK(logits.dim(0) == 3);
  CHECK(logits.dim(1) == 30);
}

TEST_CASE("forward errors") {
  Transformer m(small_config(), Role::teacher, 4);
  std::vector<int> tokens(65, 4);
  CHECK_THROWS_AS(m.forward_full(tokens), std::out_of_range);
  std::vector<int> short_tokens{4, 5, 6};
  auto wrong = nn::AttentionMask::causal(4);
  CHECK_THROWS_AS(m.forward_full(short_tokens, &wrong), nn::ShapeError);
  nn::AttentionMask future = nn::AttentionMask::causal(3);
  future.set(0, 2, true);
  CHECK_THROWS_AS(m.forward_full(short_tokens, &future), std::invalid_argument);
  kv::KvCache bad(3, 2, 8);
  CHECK_THROWS_AS(m.step(4, 0, kv::EntryTag::question, bad), kv::KvCacheError);
}

TEST_CASE("stepping token by token matches the full forward") {
  std::mt19937_64 rng(5);
  for (auto enc : {model::PositionEncoding::rotary, model::PositionEncoding::learned_absolute}) {
    for (int trial = 0; trial < 10; ++trial) {
      Transformer m(small_config(enc), Role::teacher, 50 + static_cast<std::uint64_t>(trial));
      const int n = 1 + static_cast<int>(rng() % 40);
      auto tokens = random_tokens(rng, n, 30);
      auto full = m.forward_full(tokens);
      auto cache = m.make_cache();
      for (int i = 0; i < n; ++i) {
        auto logits = m.step(tokens[static_cast<std::size_t>(i)], i, kv::EntryTag::question, cache);
        CHECK(max_diff_row(logits, full, i, 30) < 1e-5f);
        CHECK(std::isinf(logits[2]));
      }
    }
  }
}

TEST_CASE("the default-size model also agrees step-wise with the full forward") {
  ModelConfig cfg;
  Transformer m(cfg, Role::teacher, 6);
  std::mt19937_64 rng(6);
  auto tokens = random_tokens(rng, 48, cfg.vocab_size);
  auto full = m.forward_full(tokens);
  auto cache = m.make_cache();
  float worst = 0.0f;
  for (int i = 0; i < 48; ++i) {
    auto logits = m.step(tokens[static_cast<std::size_t>(i)], i, kv::EntryTag::question, cache);
    worst = std::max(worst, max_diff_row(logits, full, i, cfg.vocab_size));
  }
  CHECK(worst < 1e-5f);
}

TEST_CASE("identical steps on cloned caches give identical logits") {
  Transformer m(small_config(), Role::teacher, 7);
  auto cache = m.make_cache();
  for (int i = 0; i < 5; ++i) m.step(4 + i, i, kv::EntryTag::question, cache);
  auto a = cache;
  auto b = cache;
  CHECK(m.step(9, 5, kv::EntryTag::generation, a) == m.step(9, 5, kv::EntryTag::generation, b));
}

TEST_CASE("attention summary sums to one over the cache") {
  Transformer m(small_config(), Role::teacher, 8);
  auto cache = m.make_cache();
  std::vector<float> att;
  for (int i = 0; i < 6; ++i) m.step(4 + i, i, kv::EntryTag::question, cache, &att);
  CHECK(att.size() == 6);
  double total = 0.0;
  for (float a : att) total += a;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("parameter count is a function of the config") {
  ModelConfig cfg;
  // 102*128 + 128 + 4 * (2*128 + 4*128*128 + 2*128*512)
  CHECK(model::parameter_count(cfg, Role::teacher) == 800640);
  CHECK(model::parameter_count(cfg, Role::critic) == 800640 + 128);
  for (auto role : {Role::teacher, Role::critic}) {
    for (auto enc : {model::PositionEncoding::rotary, model::PositionEncoding::learned_absolute}) {
      ModelConfig c = small_config(enc);
      Transformer m(c, role, 9);
      long n = 0;
      for (const auto& t : m.parameters()) n += static_cast<long>(t.numel());
      CHECK(n == model::parameter_count(c, role));
    }
  }
}

TEST_CASE("critic derived from a teacher shares its body") {
  Transformer teacher(small_config(), Role::teacher, 10);
  Transformer critic = Transformer::derive(teacher, Role::critic, 11);
  CHECK(critic.parameters().size() == teacher.parameters().size() + 1);
  for (const auto& np : teacher.named_parameters()) {
    auto a = np.tensor.data();
    auto b = critic.parameter(np.name).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  std::vector<int> tokens{4, 5, 6};
  const model::SequenceView seq{tokens};
  auto v = critic.values(critic.hidden_states(std::span<const model::SequenceView>(&seq, 1)));
  CHECK(v.shape() == nn::Shape{3});
}

TEST_CASE("model checkpoint round trip") {
  auto dir = std::filesystem::temp_directory_path() / "bcr_model_ckpt";
  std::filesystem::remove_all(dir);
  Transformer m(small_config(model::PositionEncoding::learned_absolute), Role::critic, 12);
  m.save(dir);
  Transformer back = Transformer::load(dir);
  CHECK(back.config() == m.config());
  CHECK(back.role() == Role::critic);
  std::vector<int> tokens{4, 5, 6, 7};
  auto a = m.forward_full(std::vector<int>{}).numel();
  CHECK(a == 0);
  const model::SequenceView seq{tokens};
  auto va = m.values(m.hidden_states(std::span<const model::SequenceView>(&seq, 1)));
  auto vb = back.values(back.hidden_states(std::span<const model::SequenceView>(&seq, 1)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(va.at(i) == vb.at(i));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sampling") {
  std::mt19937_64 rng(13);
  const float inf = std::numeric_limits<float>::infinity();
  SUBCASE("argmax at temperature zero") {
    const std::vector<float> logits{0.0f, 5.0f, 1.0f};
    CHECK(model::sample(logits, 0.0f, rng) == 1);
    const std::vector<float> tie{2.0f, 1.0f, 2.0f};
    CHECK(model::sample(tie, 0.0f, rng) == 0);
  }
  SUBCASE("equal logits give uniform draws") {
    const int k = 6, n = 10000;
    std::vector<float> logits(k, 0.3f);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(model::sample(logits, 1.0f, rng))];
    double chi2 = 0.0;
    const double expected = static_cast<double>(n) / k;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 5 degrees of freedom: mean 5, sd sqrt(10); 3 sd above the mean
    CHECK(chi2 < 5.0 + 3.0 * std::sqrt(10.0));
  }
  SUBCASE("masked entries are never drawn") {
    std::vector<float> logits{1.0f, 1.0f, -inf, 1.0f};
    for (int i = 0; i < 10000; ++i) CHECK(model::sample(logits, 1.0f, rng) != 2);
  }
  SUBCASE("adding a constant does not change the distribution") {
    std::vector<float> a{0.1f, 1.5f, -0.7f, 0.9f};
    std::vector<float> b = a;
    for (float& x : b) x += 12.5f;
    std::mt19937_64 ra(99), rb(99);
    for (int i = 0; i < 2000; ++i) CHECK(model::sample(a, 0.8f, ra) == model::sample(b, 0.8f, rb));
    CHECK(model::sample(a, 0.0f, ra) == model::sample(b, 0.0f, rb));
    auto la = model::log_softmax(a), lb = model::log_softmax(b);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(la[i] == doctest::Approx(lb[i]).epsilon(1e-6));
  }
  SUBCASE("errors") {
    std::vector<float> all_masked(3, -inf);
    CHECK_THROWS_AS(model::sample(all_masked, 1.0f, rng), std::invalid_argument);
    std::vector<float> ok{1.0f};
    CHECK_THROWS_AS(model::sample(ok, -1.0f, rng), std::invalid_argument);
  }
}

TEST_CASE("top-k keeps the most probable ids in order") {
  const float inf = std::numeric_limits<float>::infinity();
  std::vector<float> lp{-1.0f, -0.5f, -inf, -0.5f, -3.0f};
  auto top = model::top_k(lp, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].id == 1);
  CHECK(top[1].id == 3);
  CHECK(top[2].id == 0);
  CHECK(model::top_k(lp, 10).size() == 4);
}

TEST_CASE("tokenizer") {
  auto vocab = model::Vocabulary::standard();
  SUBCASE("answer example round trips") {
    const std::string s = "<answer> (1 + 2) / 3 </answer>";
    auto ids = vocab.tokenize(s);
    CHECK(vocab.detokenize(ids) == s);
    CHECK(ids.front() == vocab.answer_open());
    CHECK(ids.back() == vocab.answer_close());
    CHECK(ids.size() == 15);  // two tags plus 13 single characters
  }
  SUBCASE("empty text") { CHECK(vocab.tokenize("").empty()); }
  SUBCASE("keywords win over characters") {
    auto ids = vocab.tokenize("3->4");
    CHECK(ids.size() == 3);
  }
  SUBCASE("unknown characters are rejected") {
    CHECK_THROWS_AS(vocab.tokenize("caf\xc3\xa9"), model::TokenizeError);
    CHECK_THROWS_AS(vocab.tokenize("a\tb"), model::TokenizeError);
  }
  SUBCASE("json round trip") {
    auto back = model::Vocabulary::from_json(vocab.to_json());
    CHECK(back.size() == vocab.size());
    CHECK(back.beacon() == vocab.beacon());
    CHECK(back.tokenize("x1 = -3\n") == vocab.tokenize("x1 = -3\n"));
  }
  SUBCASE("reserved ids") {
    CHECK(vocab.pad() == 0);
    CHECK(vocab.stop() == 1);
    CHECK(vocab.beacon() == 2);
    CHECK(vocab.size() == ModelConfig{}.vocab_size);
  }
}
