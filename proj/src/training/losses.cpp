#include "bcr/training/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "bcr/nn/ops.hpp"

namespace bcr::training {

namespace {

// Per-row weight 1 / (rows in its group * groups).
std::vector<float> group_weights(std::span<const int> row_group, int n_groups) {
  std::vector<int> counts(static_cast<std::size_t>(n_groups), 0);
  for (int g : row_group) {
    if (g < 0 || g >= n_groups) throw std::invalid_argument("row group index out of range");
    ++counts[static_cast<std::size_t>(g)];
  }
  int used = 0;
  for (int c : counts) used += c > 0;
  std::vector<float> w(row_group.size());
  for (std::size_t r = 0; r < row_group.size(); ++r) {
    w[r] = 1.0f / static_cast<float>(counts[static_cast<std::size_t>(row_group[r])] * used);
  }
  return w;
}

}  // namespace

nn::Tensor kl_distill_loss(const nn::Tensor& student_logits,
                           std::span<const std::vector<model::TokenLogProb>> teacher_topk,
                           std::span<const int> row_trajectory, int n_trajectories) {
  const int rows = student_logits.ndim() == 2 ? student_logits.dim(0) : -1;
  if (rows < 0 || static_cast<int>(teacher_topk.size()) != rows || static_cast<int>(row_trajectory.size()) != rows) {
    throw nn::ShapeError("kl_distill_loss", {student_logits.shape(), {static_cast<int>(teacher_topk.size())}},
                         "one teacher list and one trajectory index per row");
  }
  if (rows == 0) throw std::invalid_argument("kl_distill_loss: no tokens");
  std::size_t k = 0;
  for (const auto& list : teacher_topk) {
    if (list.empty()) throw std::invalid_argument("kl_distill_loss: empty teacher support");
    k = std::max(k, list.size());
  }
  const auto w = group_weights(row_trajectory, n_trajectories);

  std::vector<int> index(static_cast<std::size_t>(rows) * k);
  std::vector<std::uint8_t> pad(index.size(), 0);
  std::vector<float> weighted_p(index.size(), 0.0f);
  double constant = 0.0;  // sum_r w_r sum_k p log p
  for (int r = 0; r < rows; ++r) {
    const auto& list = teacher_topk[static_cast<std::size_t>(r)];
    double mx = -INFINITY;
    for (const auto& e : list) mx = std::max(mx, static_cast<double>(e.logp));
    double total = 0.0;
    for (const auto& e : list) total += std::exp(e.logp - mx);
    const double log_total = mx + std::log(total);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t at = static_cast<std::size_t>(r) * k + j;
      if (j >= list.size()) {
        index[at] = list[0].id;
        pad[at] = 1;
        continue;
      }
      index[at] = list[j].id;
      const double logp = list[j].logp - log_total;
      const double p = std::exp(logp);
      weighted_p[at] = static_cast<float>(w[static_cast<std::size_t>(r)] * p);
      if (p > 0.0) constant += w[static_cast<std::size_t>(r)] * p * logp;
    }
  }
  const int kk = static_cast<int>(k);
  nn::Tensor picked = nn::gather(student_logits, index, kk);
  // Padding columns get a huge negative logit: zero mass, zero weight.
  picked = nn::masked_fill(picked, pad, {rows, kk}, -1e9f);
  nn::Tensor log_q = nn::log_softmax(picked);
  nn::Tensor cross = nn::sum_all(nn::mul(log_q, nn::Tensor::from({rows, kk}, std::move(weighted_p))));
  return nn::add_scalar(nn::scale(cross, -1.0f), static_cast<float>(constant));
}

double kl_direct(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("kl_direct: supports differ");
  double sp = 0.0, sq = 0.0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] / sp;
    if (pi > 0.0) kl += pi * std::log(pi / (q[i] / sq));
  }
  return kl;
}

nn::Tensor ppo_actor_loss(const nn::Tensor& logits, std::span<const int> actions, std::span<const float> old_logp,
                          std::span<const float> advantages, float clip_ratio, float entropy_coef, int masked_id,
                          ActorLossStats* stats) {
  const int rows = logits.dim(0);
  const int vocab = logits.dim(1);
  if (static_cast<int>(actions.size()) != rows || static_cast<int>(old_logp.size()) != rows ||
      static_cast<int>(advantages.size()) != rows) {
    throw nn::ShapeError("ppo_actor_loss", {logits.shape(), {static_cast<int>(actions.size())}});
  }
  nn::Tensor lsm = nn::log_softmax(logits);
  nn::Tensor logp = nn::reshape(nn::gather(lsm, actions, 1), {rows});
  nn::Tensor ratio = nn::exp(nn::sub(logp, nn::Tensor::from({rows}, {old_logp.begin(), old_logp.end()})));
  nn::Tensor adv = nn::Tensor::from({rows}, {advantages.begin(), advantages.end()});
  nn::Tensor unclipped = nn::mul(ratio, adv);
  nn::Tensor clipped = nn::mul(nn::clamp(ratio, 1.0f - clip_ratio, 1.0f + clip_ratio), adv);
  nn::Tensor surrogate = nn::mean_all(nn::minimum(unclipped, clipped));

  nn::Tensor lsm_finite = lsm;
  if (masked_id >= 0) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(vocab), 0);
    m[static_cast<std::size_t>(masked_id)] = 1;
    lsm_finite = nn::masked_fill(lsm, m, {vocab}, 0.0f);
  }
  nn::Tensor entropy = nn::scale(nn::mean_all(nn::sum(nn::mul(nn::exp(lsm), lsm_finite), 1)), -1.0f);
  nn::Tensor loss = nn::sub(nn::scale(surrogate, -1.0f), nn::scale(entropy, entropy_coef));

  if (stats) {
    double clipped_count = 0.0, kl = 0.0;
    for (int r = 0; r < rows; ++r) {
      const float rr = ratio.at(static_cast<std::size_t>(r));
      clipped_count += (rr < 1.0f - clip_ratio || rr > 1.0f + clip_ratio) ? 1.0 : 0.0;
      kl += old_logp[static_cast<std::size_t>(r)] - logp.at(static_cast<std::size_t>(r));
    }
    stats->surrogate = surrogate.item();
    stats->entropy = entropy.item();
    stats->clip_fraction = clipped_count / rows;
    stats->approx_kl = kl / rows;
  }
  return loss;
}

nn::Tensor ppo_value_loss(const nn::Tensor& values, std::span<const float> old_values, std::span<const float> returns,
                          float clip_range, float value_coef) {
  const int rows = values.dim(0);
  if (values.ndim() != 1 || static_cast<int>(old_values.size()) != rows || static_cast<int>(returns.size()) != rows) {
    throw nn::ShapeError("ppo_value_loss", {values.shape(), {static_cast<int>(returns.size())}});
  }
  nn::Tensor old_v = nn::Tensor::from({rows}, {old_values.begin(), old_values.end()});
  nn::Tensor ret = nn::Tensor::from({rows}, {returns.begin(), returns.end()});
  nn::Tensor err = nn::sub(values, ret);
  nn::Tensor clipped = nn::add(old_v, nn::clamp(nn::sub(values, old_v), -clip_range, clip_range));
  nn::Tensor err_clipped = nn::sub(clipped, ret);
  nn::Tensor worst = nn::maximum(nn::mul(err, err), nn::mul(err_clipped, err_clipped));
  return nn::scale(nn::mean_all(worst), value_coef);
}

nn::Tensor sequence_nll(const nn::Tensor& logits, std::span<const int> targets, std::span<const int> row_sequence,
                        int n_sequences) {
  const int rows = logits.dim(0);
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(row_sequence.size()) != rows) {
    throw nn::ShapeError("sequence_nll", {logits.shape(), {static_cast<int>(targets.size())}});
  }
  const auto w = group_weights(row_sequence, n_sequences);
  nn::Tensor logp = nn::reshape(nn::gather(nn::log_softmax(logits), targets, 1), {rows});
  return nn::scale(nn::sum_all(nn::mul(logp, nn::Tensor::from({rows}, std::vector<float>(w)))), -1.0f);
}

}  // namespace bcr::training
