#include "bcr/nn/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace bcr::nn {

void AdamWConfig::validate() const {
  if (!(learning_rate >= 0.0f)) throw std::invalid_argument("adamw: learning_rate must be >= 0");
  if (!(beta1 > 0.0f && beta1 < 1.0f)) throw std::invalid_argument("adamw: beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0f && beta2 < 1.0f)) throw std::invalid_argument("adamw: beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0f)) throw std::invalid_argument("adamw: epsilon must be > 0");
  if (!(weight_decay >= 0.0f)) throw std::invalid_argument("adamw: weight_decay must be >= 0");
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (float g : p.grad()) total += static_cast<double>(g) * g;
  }
  return std::sqrt(total);
}

double adamw_step(std::vector<Tensor>& params, const AdamWConfig& config, AdamWState& state,
                  const std::vector<std::string>& names) {
  config.validate();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (float g : params[i].grad()) {
      if (!std::isfinite(g)) {
        const std::string who = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw std::runtime_error("adamw: non-finite gradient in parameter " + who +
                                 " at step " + std::to_string(state.step + 1));
      }
    }
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0f);
      state.second_moment.emplace_back(p.numel(), 0.0f);
    }
    state.step = 0;
  }

  const double norm = global_grad_norm(params);
  float clip = 1.0f;
  if (config.max_grad_norm > 0.0f && norm > config.max_grad_norm) {
    clip = static_cast<float>(config.max_grad_norm / (norm + 1e-6));
  }

  ++state.step;
  const double bias1 = 1.0 - std::pow(static_cast<double>(config.beta1), static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(static_cast<double>(config.beta2), static_cast<double>(state.step));
  const float lr = config.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const float g = grad[j] * clip;
      m[j] = config.beta1 * m[j] + (1.0f - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0f - config.beta2) * g * g;
      const float m_hat = static_cast<float>(m[j] / bias1);
      const float v_hat = static_cast<float>(v[j] / bias2);
      data[j] -= lr * config.weight_decay * data[j];
      data[j] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
  return norm;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config, std::vector<std::string> names)
    : params_(std::move(params)), names_(std::move(names)), config_(config) {
  config_.validate();
}

double AdamW::step() { return adamw_step(params_, config_, state_, names_); }

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace bcr::nn
