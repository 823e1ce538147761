#include "bcr/training/distill.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "bcr/nn/ops.hpp"
#include "bcr/training/losses.hpp"
#include "bcr/training/seeds.hpp"

namespace bcr::training {

std::vector<model::SequenceView> InterleavedBatch::views() const {
  std::vector<model::SequenceView> v;
  v.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) v.push_back({inputs[i], {}, &layouts[i].mask});
  return v;
}

InterleavedBatch pack_interleaved(std::span<const Trajectory* const> batch, int ratio_c, int beacon_id) {
  InterleavedBatch p;
  p.inputs.reserve(batch.size());
  p.layouts.reserve(batch.size());
  int offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Trajectory& t = *batch[b];
    if (t.tokens.empty() || t.prompt.empty()) throw std::invalid_argument("pack_interleaved: empty prompt or response");
    const int gen_inputs = static_cast<int>(t.tokens.size()) - 1;
    auto layout = compression::build_breadcrumbs_mask(static_cast<int>(t.prompt.size()), gen_inputs, ratio_c);
    auto ids = layout.interleave(t.prompt, std::span(t.tokens).first(static_cast<std::size_t>(gen_inputs)), beacon_id);
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      p.rows.push_back(offset + layout.predict_row(static_cast<int>(j)));
      p.targets.push_back(t.tokens[j]);
      p.row_trajectory.push_back(static_cast<int>(b));
    }
    offset += layout.size();
    p.inputs.push_back(std::move(ids));
    p.layouts.push_back(std::move(layout));
  }
  return p;
}

nn::Tensor student_distill_loss(const model::Transformer& student, std::span<const Trajectory* const> batch,
                                int ratio_c) {
  const auto packed = pack_interleaved(batch, ratio_c, student.config().beacon_id);
  const auto views = packed.views();
  std::vector<std::vector<model::TokenLogProb>> support;
  support.reserve(packed.rows.size());
  for (const Trajectory* t : batch) support.insert(support.end(), t->topk.begin(), t->topk.end());
  if (support.size() != packed.rows.size()) throw std::invalid_argument("trajectory has a top-k list count mismatch");
  nn::Tensor logits = student.lm_logits(nn::embedding(student.hidden_states(views), packed.rows));
  return kl_distill_loss(logits, support, packed.row_trajectory, static_cast<int>(batch.size()));
}

double mean_token_nll(const model::Transformer& model, std::span<const Trajectory> trajectories, int ratio_c) {
  nn::NoGradGuard no_grad;
  double total = 0.0;
  long count = 0;
  for (const auto& t : trajectories) {
    const Trajectory* one[] = {&t};
    const auto packed = pack_interleaved(one, ratio_c <= 0 ? static_cast<int>(t.tokens.size()) + 1 : ratio_c,
                                         model.config().beacon_id);
    const auto views = packed.views();
    nn::Tensor lsm = nn::log_softmax(model.lm_logits(nn::embedding(model.hidden_states(views), packed.rows)));
    const int vocab = lsm.dim(1);
    for (std::size_t r = 0; r < packed.targets.size(); ++r) {
      total -= lsm.at(r * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(packed.targets[r]));
    }
    count += static_cast<long>(packed.targets.size());
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

void reset_beacon_row(model::Transformer& student, std::uint64_t seed) {
  const int beacon = student.config().beacon_id;
  if (beacon < 0) return;
  nn::Tensor table = student.parameter("tok_emb");
  const int d = table.dim(1);
  std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(SeedPurpose::init), 0xB}));
  std::normal_distribution<float> normal(0.0f, 0.02f);
  auto data = table.mutable_data();
  for (int i = 0; i < d; ++i) data[static_cast<std::size_t>(beacon) * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)] = normal(rng);
}

Distiller::Distiller(model::Transformer& student, DistillConfig config)
    : student_(student), config_(config), opt_(student.parameters(), [&] {
        nn::AdamWConfig o;
        o.learning_rate = config.student_lr;
        o.weight_decay = config.weight_decay;
        o.max_grad_norm = config.max_grad_norm;
        return o;
      }(), student.parameter_names()) {
  config_.validate(student.vocab_size());
}

DistillStats Distiller::step(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("distill step: no trajectories");
  std::vector<const Trajectory*> batch;
  DistillStats stats;
  for (const auto& t : trajectories) {
    batch.push_back(&t);
    stats.tokens += static_cast<long>(t.tokens.size());
  }
  student_.set_requires_grad(true);
  opt_.zero_grad();
  nn::Tensor loss = student_distill_loss(student_, batch, config_.ratio_c);
  stats.loss = loss.item();
  if (!std::isfinite(stats.loss)) {
    student_.set_requires_grad(false);
    throw std::runtime_error("distill: non-finite loss (c=" + std::to_string(config_.ratio_c) + ")");
  }
  loss.backward();
  stats.grad_norm = opt_.step();
  student_.set_requires_grad(false);
  return stats;
}

}  // namespace bcr::training
