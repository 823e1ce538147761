#include "bcr/compression/controller.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace bcr::compression {

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::breadcrumbs: return "br";
    case Mode::tova: return "tova";
    case Mode::streaming: return "streaming";
    case Mode::none: return "none";
  }
  return "?";
}

Mode mode_from_name(const std::string& name) {
  if (name == "br" || name == "breadcrumbs") return Mode::breadcrumbs;
  if (name == "tova") return Mode::tova;
  if (name == "streaming") return Mode::streaming;
  if (name == "none") return Mode::none;
  throw std::invalid_argument("unknown compression mode '" + name + "' (br|tova|streaming|none)");
}

void CompressionRule::validate() const {
  if (ratio_c < 1) throw std::invalid_argument("compression ratio must be >= 1, got " + std::to_string(ratio_c));
  if (mode == Mode::breadcrumbs && beacon_id < 0) throw std::invalid_argument("breadcrumbs mode needs a beacon id");
}

long budget(int question_len, int ratio_c, long generated) {
  return question_len + ratio_c + generated / ratio_c;
}

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::stop_token: return "stop_token";
    case StopReason::cache_limit: return "cache_limit";
    case StopReason::length_limit: return "length_limit";
  }
  return "?";
}

const char* trace_event_name(TraceEventKind k) {
  switch (k) {
    case TraceEventKind::sample: return "sample";
    case TraceEventKind::beacon: return "beacon";
    case TraceEventKind::evict: return "evict";
    case TraceEventKind::stop: return "stop";
  }
  return "?";
}

void GenerationResult::write_trace(std::ostream& os) const {
  for (const auto& e : events) {
    nlohmann::json j{{"step", e.step}, {"token", e.token}, {"entries_now", e.entries_now},
                     {"event", trace_event_name(e.event)}};
    os << j.dump() << '\n';
  }
}

GenerationResult generate(const model::StepPolicy& policy, std::span<const int> prompt,
                          const CompressionRule& rule, const Limits& limits,
                          const GenerationOptions& options, std::mt19937_64& rng) {
  rule.validate();
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  const int q = static_cast<int>(prompt.size());
  const int c = rule.ratio_c;
  const bool forced = !options.forced_tokens.empty();
  const bool tova = rule.mode == Mode::tova;

  GenerationResult result;
  result.question_len = q;
  kv::KvCache cache = policy.make_cache();
  auto over_limit = [&](long entries) { return limits.max_cache > 0 && entries > limits.max_cache; };
  auto finish = [&](StopReason reason) {
    result.stopped_by = reason;
    result.peak_entries = cache.stats().peak_entries;
    result.final_positions = cache.positions();
    return result;
  };

  if (over_limit(q)) return finish(StopReason::cache_limit);
  std::vector<float> logits;
  std::vector<float> attention;
  for (int i = 0; i < q; ++i) {
    logits = policy.step(prompt[static_cast<std::size_t>(i)], i, kv::EntryTag::question, cache,
                         tova ? &attention : nullptr);
  }
  int position = q;

  for (long i = 0;; ++i) {
    if (limits.max_tokens > 0 && i >= limits.max_tokens) return finish(StopReason::length_limit);
    if (forced && i >= static_cast<long>(options.forced_tokens.size())) return finish(StopReason::length_limit);
    const int x = forced ? options.forced_tokens[static_cast<std::size_t>(i)]
                         : model::sample(logits, options.temperature, rng);
    if (options.record_logits) result.logits.push_back(logits);
    result.tokens.push_back(x);
    result.events.push_back({i, x, cache.size(), TraceEventKind::sample});
    if (x == options.stop_id) {
      result.events.push_back({i, x, cache.size(), TraceEventKind::stop});
      result.cache_trace.push_back(cache.stats());
      return finish(StopReason::stop_token);
    }
    const long t = i + 1;  // generated entries once x is written
    switch (rule.mode) {
      case Mode::breadcrumbs:
        if (i > 0 && i % c == 0) {
          if (over_limit(cache.size() + 1L)) {
            result.cache_trace.push_back(cache.stats());
            return finish(StopReason::cache_limit);
          }
          policy.step(rule.beacon_id, position++, kv::EntryTag::beacon, cache);
          result.events.push_back({i, rule.beacon_id, cache.size(), TraceEventKind::beacon});
          cache.evict_suffix_keep_last(c);
          result.events.push_back({i, rule.beacon_id, cache.size(), TraceEventKind::evict});
        }
        break;
      case Mode::tova:
        while (cache.size() + 1L > budget(q, c, t) && !cache.empty()) {
          const auto slot = static_cast<int>(std::min_element(attention.begin(), attention.end()) - attention.begin());
          cache.evict_slots({slot});
          attention.erase(attention.begin() + slot);
          result.events.push_back({i, x, cache.size(), TraceEventKind::evict});
        }
        break;
      case Mode::streaming: {
        const long window = c + t / c;
        while (cache.size() - q + 1L > window && cache.size() > q) {
          cache.evict_slots({q});
          result.events.push_back({i, x, cache.size(), TraceEventKind::evict});
        }
        break;
      }
      case Mode::none:
        break;
    }
    if (over_limit(cache.size() + 1L)) {
      result.cache_trace.push_back(cache.stats());
      return finish(StopReason::cache_limit);
    }
    logits = policy.step(x, position++, kv::EntryTag::generation, cache, tova ? &attention : nullptr);
    result.cache_trace.push_back(cache.stats());
  }
}

namespace {

GenerationResult generate_as(Mode mode, const model::StepPolicy& policy, std::span<const int> prompt,
                             const CompressionRule& rule, const Limits& limits,
                             const GenerationOptions& options, std::mt19937_64& rng) {
  if (rule.mode != mode) {
    throw std::invalid_argument(std::string(mode_name(mode)) + " controller called with mode " + mode_name(rule.mode));
  }
  return generate(policy, prompt, rule, limits, options, rng);
}

}  // namespace

GenerationResult breadcrumbs_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                                      const CompressionRule& rule, const Limits& limits,
                                      const GenerationOptions& options, std::mt19937_64& rng) {
  return generate_as(Mode::breadcrumbs, policy, prompt, rule, limits, options, rng);
}

GenerationResult tova_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                               const CompressionRule& rule, const Limits& limits,
                               const GenerationOptions& options, std::mt19937_64& rng) {
  return generate_as(Mode::tova, policy, prompt, rule, limits, options, rng);
}

GenerationResult streaming_generate(const model::StepPolicy& policy, std::span<const int> prompt,
                                    const CompressionRule& rule, const Limits& limits,
                                    const GenerationOptions& options, std::mt19937_64& rng) {
  return generate_as(Mode::streaming, policy, prompt, rule, limits, options, rng);
}

BreadcrumbsLayout build_breadcrumbs_mask(int question_len, int gen_len, int ratio_c) {
  if (question_len < 1 || gen_len < 0 || ratio_c < 1) {
    throw std::invalid_argument("build_breadcrumbs_mask: need question_len >= 1, gen_len >= 0, ratio_c >= 1");
  }
  BreadcrumbsLayout layout;
  layout.question_len = question_len;
  layout.gen_len = gen_len;
  layout.ratio_c = ratio_c;
  layout.kinds.assign(static_cast<std::size_t>(question_len), SlotKind::question);
  std::vector<int> window_of_slot(static_cast<std::size_t>(question_len), -1);
  for (int j = 0; j < gen_len; ++j) {
    layout.gen_slots.push_back(layout.size());
    layout.kinds.push_back(SlotKind::generation);
    window_of_slot.push_back(j / ratio_c);
    if ((j + 1) % ratio_c == 0) {
      layout.kinds.push_back(SlotKind::beacon);
      window_of_slot.push_back(j / ratio_c);
    }
  }
  const int n = layout.size();
  layout.mask = nn::AttentionMask(n);
  for (int r = 0; r < n; ++r) {
    const auto kind = layout.kinds[static_cast<std::size_t>(r)];
    const int window = window_of_slot[static_cast<std::size_t>(r)];
    for (int k = 0; k <= r; ++k) {
      const auto key_kind = layout.kinds[static_cast<std::size_t>(k)];
      bool ok = false;
      if (kind == SlotKind::question || key_kind == SlotKind::question) {
        ok = true;
      } else if (key_kind == SlotKind::beacon) {
        ok = k == r || window_of_slot[static_cast<std::size_t>(k)] < window;
      } else {
        ok = window_of_slot[static_cast<std::size_t>(k)] == window;
      }
      layout.mask.set(r, k, ok);
    }
  }
  return layout;
}

std::vector<int> BreadcrumbsLayout::interleave(std::span<const int> prompt, std::span<const int> generated,
                                               int beacon_id) const {
  if (static_cast<int>(prompt.size()) != question_len || static_cast<int>(generated.size()) < gen_len) {
    throw std::invalid_argument("interleave: prompt/generation lengths do not match the layout");
  }
  std::vector<int> out(prompt.begin(), prompt.end());
  out.resize(static_cast<std::size_t>(size()), beacon_id);
  for (int j = 0; j < gen_len; ++j) out[static_cast<std::size_t>(gen_slots[static_cast<std::size_t>(j)])] = generated[static_cast<std::size_t>(j)];
  return out;
}

}  // namespace bcr::compression
