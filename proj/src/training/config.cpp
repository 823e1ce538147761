#include "bcr/training/config.hpp"

#include <stdexcept>
#include <string>

namespace bcr::training {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Reads `key` into `field` when present; unknown keys are rejected by the caller.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) field = it->get<T>();
}

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(std::string("unknown ") + what + " key '" + key + "'");
  }
}

}  // namespace

PpoConfig PpoConfig::paper() { return PpoConfig{}; }

PpoConfig PpoConfig::desk() {
  PpoConfig c;
  c.actor_lr = 3e-5f;
  c.critic_lr = 1e-4f;
  c.batch = 32;
  c.minibatch = 32;
  c.max_new_tokens = 128;
  return c;
}

void PpoConfig::validate() const {
  require(actor_lr > 0 && critic_lr > 0, "ppo learning rates must be positive");
  require(clip_ratio > 0 && clip_ratio < 1, "ppo clip_ratio must be in (0, 1)");
  require(epochs > 0 && minibatch > 0 && batch > 0, "ppo epochs, minibatch and batch must be positive");
  require(gamma > 0 && gamma <= 1 && gae_lambda > 0 && gae_lambda <= 1, "ppo gamma and gae_lambda must be in (0, 1]");
  require(entropy_coef >= 0 && value_coef > 0 && clip_range_value > 0, "ppo loss coefficients out of range");
  require(max_grad_norm > 0 && weight_decay >= 0, "ppo max_grad_norm must be positive");
  require(temperature > 0, "ppo temperature must be positive");
  require(max_new_tokens > 0, "ppo max_new_tokens must be positive");
}

nlohmann::json PpoConfig::to_json() const {
  return {{"actor_lr", actor_lr},
          {"critic_lr", critic_lr},
          {"clip_ratio", clip_ratio},
          {"epochs", epochs},
          {"minibatch", minibatch},
          {"gamma", gamma},
          {"gae_lambda", gae_lambda},
          {"entropy_coef", entropy_coef},
          {"value_coef", value_coef},
          {"clip_range_value", clip_range_value},
          {"max_grad_norm", max_grad_norm},
          {"weight_decay", weight_decay},
          {"batch", batch},
          {"normalize_advantages", normalize_advantages},
          {"temperature", temperature},
          {"max_new_tokens", max_new_tokens}};
}

PpoConfig PpoConfig::from_json(const nlohmann::json& j) {
  PpoConfig c;
  reject_unknown(j, c.to_json(), "ppo");
  read(j, "actor_lr", c.actor_lr);
  read(j, "critic_lr", c.critic_lr);
  read(j, "clip_ratio", c.clip_ratio);
  read(j, "epochs", c.epochs);
  read(j, "minibatch", c.minibatch);
  read(j, "gamma", c.gamma);
  read(j, "gae_lambda", c.gae_lambda);
  read(j, "entropy_coef", c.entropy_coef);
  read(j, "value_coef", c.value_coef);
  read(j, "clip_range_value", c.clip_range_value);
  read(j, "max_grad_norm", c.max_grad_norm);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch", c.batch);
  read(j, "normalize_advantages", c.normalize_advantages);
  read(j, "temperature", c.temperature);
  read(j, "max_new_tokens", c.max_new_tokens);
  return c;
}

DistillConfig DistillConfig::paper() { return DistillConfig{}; }

DistillConfig DistillConfig::desk() {
  DistillConfig c;
  c.student_lr = 3e-4f;
  c.top_k = 0;
  c.batch = 32;
  return c;
}

void DistillConfig::validate(int vocab_size) const {
  require(student_lr > 0, "distill student_lr must be positive");
  require(ratio_c >= 1, "distill ratio_c must be >= 1");
  require(top_k >= 0, "distill top_k must be >= 0");
  require(vocab_size <= 0 || top_k <= vocab_size,
          "distill top_k " + std::to_string(top_k) + " exceeds vocabulary size " + std::to_string(vocab_size));
  require(batch > 0, "distill batch must be positive");
  require(weight_decay >= 0 && max_grad_norm > 0, "distill optimizer settings out of range");
}

nlohmann::json DistillConfig::to_json() const {
  return {{"student_lr", student_lr}, {"ratio_c", ratio_c},           {"top_k", top_k},
          {"batch", batch},           {"weight_decay", weight_decay}, {"max_grad_norm", max_grad_norm}};
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
  DistillConfig c;
  reject_unknown(j, c.to_json(), "distill");
  read(j, "student_lr", c.student_lr);
  read(j, "ratio_c", c.ratio_c);
  read(j, "top_k", c.top_k);
  read(j, "batch", c.batch);
  read(j, "weight_decay", c.weight_decay);
  read(j, "max_grad_norm", c.max_grad_norm);
  return c;
}

void SftConfig::validate() const {
  require(steps >= 0 && batch > 0 && warmup_steps >= 0, "sft steps must be >= 0 and batch positive");
  require(lr > 0 && weight_decay >= 0 && max_grad_norm > 0, "sft optimizer settings out of range");
  require(p_correct >= 0 && p_correct <= 1, "sft p_correct must be in [0, 1]");
  require(copy_fraction >= 0 && copy_fraction <= 1, "sft copy_fraction must be in [0, 1]");
}

nlohmann::json SftConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"lr", lr},
          {"warmup_steps", warmup_steps},
          {"weight_decay", weight_decay},
          {"max_grad_norm", max_grad_norm},
          {"p_correct", p_correct},
          {"copy_fraction", copy_fraction}};
}

SftConfig SftConfig::from_json(const nlohmann::json& j) {
  SftConfig c;
  reject_unknown(j, c.to_json(), "sft");
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "lr", c.lr);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "weight_decay", c.weight_decay);
  read(j, "max_grad_norm", c.max_grad_norm);
  read(j, "p_correct", c.p_correct);
  read(j, "copy_fraction", c.copy_fraction);
  return c;
}

}  // namespace bcr::training
