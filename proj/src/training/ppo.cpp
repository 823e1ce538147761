#include "bcr/training/ppo.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bcr/nn/ops.hpp"
#include "bcr/training/losses.hpp"

namespace bcr::training {

namespace {

nn::AdamWConfig optimizer(float lr, const PpoConfig& c) {
  nn::AdamWConfig o;
  o.learning_rate = lr;
  o.weight_decay = c.weight_decay;
  o.max_grad_norm = c.max_grad_norm;
  return o;
}

void check_finite(double v, const char* what, long update, const PpoStats& s) {
  if (std::isfinite(v)) return;
  throw std::runtime_error(std::string("ppo: non-finite ") + what + " at update " + std::to_string(update) +
                           " (mean reward " + std::to_string(s.mean_reward) + ", mean length " +
                           std::to_string(s.mean_length) + ")");
}

}  // namespace

std::vector<float> token_advantages(float reward, std::span<const float> values, float gamma, float lambda) {
  const std::size_t n = values.size();
  std::vector<float> adv(n);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : 0.0;
    const double r = t + 1 == n ? reward : 0.0;
    const double delta = r + gamma * next_value - values[t];
    running = delta + static_cast<double>(gamma) * lambda * running;
    adv[t] = static_cast<float>(running);
  }
  return adv;
}

std::vector<model::SequenceView> PackedBatch::views() const {
  std::vector<model::SequenceView> v;
  v.reserve(inputs.size());
  for (const auto& s : inputs) v.push_back({s, {}, nullptr});
  return v;
}

PackedBatch pack_plain(std::span<const Trajectory* const> batch) {
  PackedBatch p;
  int offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Trajectory& t = *batch[b];
    if (t.tokens.empty() || t.prompt.empty()) throw std::invalid_argument("pack_plain: empty prompt or response");
    std::vector<int> seq = t.prompt;
    seq.insert(seq.end(), t.tokens.begin(), t.tokens.end() - 1);
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      p.rows.push_back(offset + static_cast<int>(t.prompt.size() + j) - 1);
      p.targets.push_back(t.tokens[j]);
      p.row_trajectory.push_back(static_cast<int>(b));
    }
    offset += static_cast<int>(seq.size());
    p.inputs.push_back(std::move(seq));
  }
  return p;
}

PpoTrainer::PpoTrainer(model::Transformer& actor, model::Transformer& critic, PpoConfig config)
    : actor_(actor),
      critic_(critic),
      config_(config),
      actor_opt_(actor.parameters(), optimizer(config.actor_lr, config), actor.parameter_names()),
      critic_opt_(critic.parameters(), optimizer(config.critic_lr, config), critic.parameter_names()) {
  config_.validate();
  if (critic.role() != model::Role::critic) throw std::invalid_argument("PpoTrainer: critic must have the critic role");
}

PpoStats PpoTrainer::update(std::span<const Trajectory> episodes) {
  if (episodes.empty()) throw std::invalid_argument("ppo update: no episodes");
  PpoStats stats;
  for (const auto& e : episodes) {
    stats.mean_reward += e.reward;
    stats.accuracy += e.reward >= 1.0f ? 1.0 : 0.0;
    stats.mean_length += static_cast<double>(e.tokens.size());
  }
  const double n_episodes = static_cast<double>(episodes.size());
  stats.mean_reward /= n_episodes;
  stats.accuracy /= n_episodes;
  stats.mean_length /= n_episodes;

  // Old values and advantages for every token, computed once before any update.
  std::vector<const Trajectory*> all;
  for (const auto& e : episodes) all.push_back(&e);
  std::vector<std::vector<float>> old_values(episodes.size()), advantages(episodes.size()), returns(episodes.size());
  {
    nn::NoGradGuard no_grad;
    const std::size_t chunk = static_cast<std::size_t>(config_.minibatch);
    for (std::size_t start = 0; start < all.size(); start += chunk) {
      const std::size_t end = std::min(all.size(), start + chunk);
      const auto packed = pack_plain(std::span(all).subspan(start, end - start));
      const auto views = packed.views();
      const nn::Tensor v = critic_.values(nn::embedding(critic_.hidden_states(views), packed.rows));
      for (std::size_t r = 0; r < packed.rows.size(); ++r) {
        old_values[start + static_cast<std::size_t>(packed.row_trajectory[r])].push_back(v.at(r));
      }
    }
  }
  std::vector<double> flat;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    advantages[i] = token_advantages(episodes[i].reward, old_values[i], config_.gamma, config_.gae_lambda);
    returns[i].resize(advantages[i].size());
    for (std::size_t t = 0; t < advantages[i].size(); ++t) returns[i][t] = advantages[i][t] + old_values[i][t];
    flat.insert(flat.end(), advantages[i].begin(), advantages[i].end());
  }
  if (config_.normalize_advantages && flat.size() > 1) {
    const double mean = std::accumulate(flat.begin(), flat.end(), 0.0) / static_cast<double>(flat.size());
    double var = 0.0;
    for (double a : flat) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(flat.size()));
    for (auto& adv : advantages) {
      for (auto& a : adv) a = static_cast<float>((a - mean) / (sd + 1e-8));
    }
  }

  const float inv_t = 1.0f / config_.temperature;
  int minibatches = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(config_.minibatch)) {
      const std::size_t end = std::min(all.size(), start + static_cast<std::size_t>(config_.minibatch));
      const auto packed = pack_plain(std::span(all).subspan(start, end - start));
      const auto views = packed.views();
      std::vector<float> old_logp, adv, ret, old_v;
      for (std::size_t i = start; i < end; ++i) {
        old_logp.insert(old_logp.end(), episodes[i].sampled_logp.begin(), episodes[i].sampled_logp.end());
        adv.insert(adv.end(), advantages[i].begin(), advantages[i].end());
        ret.insert(ret.end(), returns[i].begin(), returns[i].end());
        old_v.insert(old_v.end(), old_values[i].begin(), old_values[i].end());
      }

      actor_.set_requires_grad(true);
      actor_opt_.zero_grad();
      nn::Tensor logits = actor_.lm_logits(nn::embedding(actor_.hidden_states(views), packed.rows));
      if (inv_t != 1.0f) logits = nn::scale(logits, inv_t);
      ActorLossStats a;
      nn::Tensor actor_loss = ppo_actor_loss(logits, packed.targets, old_logp, adv, config_.clip_ratio,
                                             config_.entropy_coef, actor_.config().beacon_id, &a);
      check_finite(actor_loss.item(), "actor loss", updates_, stats);
      actor_loss.backward();
      stats.actor_grad_norm += actor_opt_.step();
      actor_.set_requires_grad(false);

      critic_.set_requires_grad(true);
      critic_opt_.zero_grad();
      nn::Tensor values = critic_.values(nn::embedding(critic_.hidden_states(views), packed.rows));
      nn::Tensor value_loss = ppo_value_loss(values, old_v, ret, config_.clip_range_value, config_.value_coef);
      check_finite(value_loss.item(), "value loss", updates_, stats);
      value_loss.backward();
      stats.critic_grad_norm += critic_opt_.step();
      critic_.set_requires_grad(false);

      stats.actor_loss += actor_loss.item();
      stats.value_loss += value_loss.item();
      stats.entropy += a.entropy;
      stats.clip_fraction += a.clip_fraction;
      stats.approx_kl += a.approx_kl;
      ++minibatches;
    }
  }
  for (double* v : {&stats.actor_loss, &stats.value_loss, &stats.entropy, &stats.clip_fraction, &stats.approx_kl,
                    &stats.actor_grad_norm, &stats.critic_grad_norm}) {
    *v /= minibatches;
  }
  ++updates_;
  return stats;
}

}  // namespace bcr::training
