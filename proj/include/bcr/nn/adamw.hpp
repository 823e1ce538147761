#pragma once

#include <string>
#include <vector>

#include "bcr/nn/tensor.hpp"

namespace bcr::nn {

struct AdamWConfig {
  float learning_rate = 1e-3f;
  float weight_decay = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  /// Global L2 clipping threshold; <= 0 disables clipping.
  float max_grad_norm = 1.0f;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct AdamWState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  long step = 0;
};

/// Global L2 norm over all parameter gradients.
double global_grad_norm(const std::vector<Tensor>& params);

/// One decoupled-weight-decay Adam update over `params`, reading each
/// tensor's accumulated grad. Gradients are first clipped to
/// config.max_grad_norm (global norm). Returns the pre-clip norm.
/// A non-finite gradient aborts with std::runtime_error before any
/// parameter is touched.
double adamw_step(std::vector<Tensor>& params, const AdamWConfig& config, AdamWState& state,
                  const std::vector<std::string>& names = {});

/// Convenience owner of a parameter list plus its optimizer state.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config, std::vector<std::string> names = {});

  double step();
  void zero_grad();

  const AdamWConfig& config() const { return config_; }
  AdamWConfig& config() { return config_; }
  const AdamWState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  AdamWConfig config_;
  AdamWState state_;
};

}  // namespace bcr::nn
