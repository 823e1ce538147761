#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "bcr/nn/ops.hpp"
#include "bcr/training/config.hpp"
#include "bcr/training/demonstrations.hpp"
#include "bcr/training/distill.hpp"
#include "bcr/training/losses.hpp"
#include "bcr/training/pipeline.hpp"
#include "bcr/training/ppo.hpp"
#include "bcr/training/rollout.hpp"
#include "bcr/training/seeds.hpp"
#include "bcr/training/trajectory.hpp"
#include "support/gradcheck.hpp"

using namespace bcr;
using model::TokenLogProb;
using training::Trajectory;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.max_positions = 256;
  return c;
}

std::vector<TokenLogProb> support(std::initializer_list<std::pair<int, double>> probs) {
  std::vector<TokenLogProb> out;
  for (auto [id, p] : probs) out.push_back({id, static_cast<float>(std::log(p))});
  return out;
}

// Direct double-precision value of the batch loss: mean over trajectories of
// the mean token KL on each row's stored support.
double direct_batch_kl(const std::vector<double>& logits, int vocab, const std::vector<std::vector<TokenLogProb>>& topk,
                       const std::vector<int>& row_traj, int n_traj) {
  std::vector<double> sum(static_cast<std::size_t>(n_traj), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n_traj), 0);
  for (std::size_t r = 0; r < topk.size(); ++r) {
    std::vector<double> p, q;
    for (const auto& e : topk[r]) {
      p.push_back(std::exp(static_cast<double>(e.logp)));
      q.push_back(std::exp(logits[r * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(e.id)]));
    }
    sum[static_cast<std::size_t>(row_traj[r])] += training::kl_direct(p, q);
    ++count[static_cast<std::size_t>(row_traj[r])];
  }
  double total = 0.0;
  for (int b = 0; b < n_traj; ++b) total += sum[static_cast<std::size_t>(b)] / count[static_cast<std::size_t>(b)];
  return total / n_traj;
}

std::vector<double> as_double(const nn::Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<float> snapshot(const model::Transformer& m) {
  std::vector<float> out;
  for (const auto& p : m.named_parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("kl_distill_loss on the two-token hand case") {
  // Student uniform over ids 5 and 9, other ids carry arbitrary mass that the
  // support restriction must ignore.
  std::vector<float> row(12, 0.3f);
  row[5] = 1.7f;
  row[9] = 1.7f;
  nn::Tensor logits = nn::Tensor::from({1, 12}, row);
  const std::vector<std::vector<TokenLogProb>> teacher{support({{5, 0.75}, {9, 0.25}})};
  const std::vector<int> traj{0};
  const double loss = training::kl_distill_loss(logits, teacher, traj, 1).item();
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(expected == doctest::Approx(0.130812).epsilon(1e-6));
  CHECK(std::abs(loss - expected) < 1e-6);
  CHECK(std::abs(training::kl_direct(std::vector<double>{0.75, 0.25}, std::vector<double>{0.5, 0.5}) - 0.130812) <
        1e-6);
}

TEST_CASE("kl_distill_loss renormalizes a partial teacher support") {
  // Stored mass 0.6 over {1: 0.45, 4: 0.15} -> P = [0.75, 0.25].
  nn::Tensor logits = nn::Tensor::from({1, 6}, {0.0f, 2.0f, -1.0f, 0.5f, 2.0f, 3.0f});
  const std::vector<std::vector<TokenLogProb>> teacher{support({{1, 0.45}, {4, 0.15}})};
  const std::vector<int> traj{0};
  CHECK(std::abs(training::kl_distill_loss(logits, teacher, traj, 1).item() - 0.130812) < 1e-6);
}

TEST_CASE("kl_distill_loss matches direct summation on random batches") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 7);
    const int vocab = 4 + static_cast<int>(rng() % 9);
    const int n_traj = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(rows));
    nn::Tensor logits = testing::random_tensor({rows, vocab}, rng, -3.0f, 3.0f, false);
    std::vector<std::vector<TokenLogProb>> topk;
    std::vector<int> traj;
    for (int r = 0; r < rows; ++r) {
      std::vector<float> t(static_cast<std::size_t>(vocab));
      for (float& v : t) v = std::uniform_real_distribution<float>(-3.0f, 3.0f)(rng);
      const int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab));
      topk.push_back(model::top_k(model::log_softmax(t), k));
      traj.push_back(r < n_traj ? r : static_cast<int>(rng() % static_cast<std::uint64_t>(n_traj)));
    }
    const double got = training::kl_distill_loss(logits, topk, traj, n_traj).item();
    const double want = direct_batch_kl(as_double(logits), vocab, topk, traj, n_traj);
    CHECK(want >= 0.0);
    CHECK(std::abs(got - want) < 1e-6);
  }
}

TEST_CASE("kl_distill_loss is zero when the student matches the teacher") {
  std::mt19937_64 rng(3);
  nn::Tensor logits = testing::random_tensor({3, 10}, rng, -2.0f, 2.0f, false);
  std::vector<std::vector<TokenLogProb>> topk;
  for (int r = 0; r < 3; ++r) {
    auto row = std::vector<float>(logits.data().begin() + r * 10, logits.data().begin() + (r + 1) * 10);
    topk.push_back(model::top_k(model::log_softmax(row), r == 1 ? 4 : 10));
  }
  const std::vector<int> traj{0, 0, 1};
  CHECK(std::abs(training::kl_distill_loss(logits, topk, traj, 2).item()) < 1e-6);
}

TEST_CASE("kl_distill_loss gradient matches finite differences") {
  // Oracle: central differences (h = 1e-3) of the double-precision direct sum,
  // so f32 rounding in the loss does not swamp small gradients.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int rows = 1 + static_cast<int>(rng() % 5);
    const int vocab = 3 + static_cast<int>(rng() % 8);
    nn::Tensor logits = testing::random_tensor({rows, vocab}, rng, -2.0f, 2.0f);
    std::vector<std::vector<TokenLogProb>> topk;
    std::vector<int> traj;
    for (int r = 0; r < rows; ++r) {
      std::vector<float> t(static_cast<std::size_t>(vocab));
      for (float& v : t) v = std::uniform_real_distribution<float>(-2.0f, 2.0f)(rng);
      topk.push_back(model::top_k(model::log_softmax(t), 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab))));
      traj.push_back(r % 2);
    }
    const int n_traj = rows > 1 ? 2 : 1;
    training::kl_distill_loss(logits, topk, traj, n_traj).backward();
    const auto base = as_double(logits);
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto plus = base, minus = base;
      plus[i] += 1e-3;
      minus[i] -= 1e-3;
      const double fd = (direct_batch_kl(plus, vocab, topk, traj, n_traj) - direct_batch_kl(minus, vocab, topk, traj, n_traj)) / 2e-3;
      const double g = logits.grad()[i];
      diff += (g - fd) * (g - fd);
      na += g * g;
      nf += fd * fd;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-3});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("kl_distill_loss rejects an empty support") {
  nn::Tensor logits = nn::Tensor::zeros({1, 4});
  const std::vector<std::vector<TokenLogProb>> topk{{}};
  const std::vector<int> traj{0};
  CHECK_THROWS_AS(training::kl_distill_loss(logits, topk, traj, 1), std::invalid_argument);
}

TEST_CASE("ppo actor loss: zero advantage gives zero gradient without entropy") {
  std::mt19937_64 rng(5);
  nn::Tensor logits = testing::random_tensor({6, 5}, rng, -1.0f, 1.0f);
  const std::vector<int> actions{0, 1, 2, 3, 4, 0};
  const std::vector<float> old_logp(6, -1.2f), adv(6, 0.0f);
  training::ppo_actor_loss(logits, actions, old_logp, adv, 0.2f, 0.0f, -1).backward();
  for (float g : logits.grad()) CHECK(g == 0.0f);
}

TEST_CASE("ppo actor loss: clipped tokens contribute no gradient") {
  // Token 0: ratio 1.5 with positive advantage (clipped). Token 1: ratio 0.5
  // with negative advantage (clipped). Token 2: ratio 1 (not clipped).
  nn::Tensor logits = nn::Tensor::from({3, 2}, {0.3f, -0.2f, 0.1f, 0.4f, -0.5f, 0.2f}, true);
  const auto lsm = nn::log_softmax(logits.detach());
  const std::vector<int> actions{0, 1, 0};
  const std::vector<float> old_logp{lsm.at(0) - std::log(1.5f), lsm.at(3) - std::log(0.5f), lsm.at(4)};
  const std::vector<float> adv{1.0f, -1.0f, 0.7f};
  training::ActorLossStats stats;
  training::ppo_actor_loss(logits, actions, old_logp, adv, 0.2f, 0.0f, -1, &stats).backward();
  auto g = logits.grad();
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[2] == 0.0f);
  CHECK(g[3] == 0.0f);
  CHECK(std::abs(g[4]) > 1e-3f);
  CHECK(stats.clip_fraction == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ppo actor loss entropy ignores the masked column") {
  nn::Tensor logits = nn::Tensor::from({1, 3}, {0.0f, 0.0f, -INFINITY}, true);
  const std::vector<int> a{0};
  const std::vector<float> old{std::log(0.5f)}, adv{0.0f};
  training::ActorLossStats s;
  nn::Tensor loss = training::ppo_actor_loss(logits, a, old, adv, 0.2f, 1.0f, 2, &s);
  CHECK(s.entropy == doctest::Approx(std::log(2.0)));
  loss.backward();
  for (float g : logits.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("value loss takes the worse of clipped and unclipped errors") {
  nn::Tensor v = nn::Tensor::from({2}, {1.0f, 0.1f}, true);
  const std::vector<float> old{0.0f, 0.0f}, ret{0.0f, 1.0f};
  // Row 0: unclipped 1, clipped (0.5)^2 = 0.25 -> 1. Row 1: unclipped 0.81, clipped 0.81.
  const double loss = training::ppo_value_loss(v, old, ret, 0.5f, 0.5f).item();
  CHECK(loss == doctest::Approx(0.5 * (1.0 + 0.81) / 2.0));
}

TEST_CASE("advantages with gamma = lambda = 1 are reward minus value") {
  const std::vector<float> values{0.2f, 0.5f, -0.1f, 0.9f};
  const auto adv = training::token_advantages(1.0f, values, 1.0f, 1.0f);
  for (std::size_t t = 0; t < values.size(); ++t) CHECK(adv[t] == doctest::Approx(1.0f - values[t]));
  // gamma = 0.5, lambda = 1: A_t = 0.5^(n-1-t) R - V_t.
  const auto discounted = training::token_advantages(1.0f, values, 0.5f, 1.0f);
  CHECK(discounted[0] == doctest::Approx(0.125 - 0.2).epsilon(1e-5));
  CHECK(discounted[3] == doctest::Approx(1.0 - 0.9).epsilon(1e-5));
}

TEST_CASE("ppo drives a two-action bandit to the rewarded action") {
  model::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 2;
  c.max_positions = 4;
  c.beacon_id = -1;
  model::Transformer actor(c, model::Role::teacher, 1);
  model::Transformer critic = model::Transformer::derive(actor, model::Role::critic, 2);
  training::PpoConfig pc = training::PpoConfig::desk();
  pc.batch = pc.minibatch = 16;
  pc.actor_lr = 3e-3f;
  pc.critic_lr = 3e-3f;
  pc.entropy_coef = 0.0f;
  training::PpoTrainer trainer(actor, critic, pc);
  const std::vector<int> prompt{0};
  auto prob_a = [&] {
    auto cache = actor.make_cache();
    const auto lp = model::log_softmax(actor.step(0, 0, kv::EntryTag::question, cache));
    return std::exp(static_cast<double>(lp[0]));
  };
  std::mt19937_64 rng(9);
  int steps = 0;
  for (; steps < 200 && prob_a() < 0.99; ++steps) {
    std::vector<Trajectory> batch;
    for (int i = 0; i < pc.batch; ++i) {
      auto cache = actor.make_cache();
      const auto logits = actor.step(0, 0, kv::EntryTag::question, cache);
      const int a = model::sample(logits, 1.0f, rng);
      Trajectory t;
      t.prompt = prompt;
      t.tokens = {a};
      t.sampled_logp = {model::log_softmax(logits)[static_cast<std::size_t>(a)]};
      t.reward = a == 0 ? 1.0f : 0.0f;
      batch.push_back(t);
    }
    trainer.update(batch);
  }
  MESSAGE("bandit steps: " << steps << ", P(A) = " << prob_a());
  CHECK(prob_a() > 0.99);
}

TEST_CASE("distillation leaves teacher and critic bit-identical") {
  const auto vocab = model::Vocabulary::standard();
  model::Transformer teacher(small_config(), model::Role::teacher, 1);
  model::Transformer critic = model::Transformer::derive(teacher, model::Role::critic, 2);
  model::Transformer student = model::Transformer::derive(teacher, model::Role::student, 3);
  training::reset_beacon_row(student, 4);
  const auto tc = tasks::TaskConfig::toy(tasks::TaskKind::stargraph);
  std::vector<tasks::TaskInstance> inst;
  for (int i = 0; i < 4; ++i) inst.push_back(tasks::generate(tc, static_cast<std::uint64_t>(i)));
  training::RolloutOptions ro;
  ro.max_new_tokens = 12;
  const auto trajs = training::sample_trajectories(teacher, vocab, inst, ro, 1);
  const auto t_before = snapshot(teacher), c_before = snapshot(critic), s_before = snapshot(student);
  training::DistillConfig dc = training::DistillConfig::desk();
  training::Distiller d(student, dc);
  d.step(trajs);
  CHECK(snapshot(teacher) == t_before);
  CHECK(snapshot(critic) == c_before);
  CHECK(snapshot(student) != s_before);
}

TEST_CASE("one trajectory of one token: student loss equals the token KL") {
  model::Transformer student(small_config(), model::Role::student, 8);
  Trajectory t;
  t.prompt = {10, 11, 12};
  t.tokens = {20};
  std::vector<float> teacher_logits(static_cast<std::size_t>(student.vocab_size()), 0.0f);
  std::mt19937_64 rng(2);
  for (auto& v : teacher_logits) v = std::uniform_real_distribution<float>(-2.0f, 2.0f)(rng);
  teacher_logits[2] = -INFINITY;
  t.topk = {model::top_k(model::log_softmax(teacher_logits), student.vocab_size())};
  const Trajectory* batch[] = {&t};
  const double joint = training::student_distill_loss(student, batch, 2).item();
  nn::Tensor last = nn::slice(student.forward_full(t.prompt), 0, 2, 3);
  const std::vector<int> traj{0};
  CHECK(std::abs(joint - training::kl_distill_loss(last, t.topk, traj, 1).item()) < 1e-6);
}

TEST_CASE("stored full-vocabulary support has mass one and survives the store") {
  const auto vocab = model::Vocabulary::standard();
  model::Transformer teacher(small_config(), model::Role::teacher, 5);
  const auto tc = tasks::TaskConfig::toy(tasks::TaskKind::countdown);
  std::vector<tasks::TaskInstance> inst;
  for (int i = 0; i < 3; ++i) inst.push_back(tasks::generate(tc, static_cast<std::uint64_t>(i)));
  training::RolloutOptions ro;
  ro.max_new_tokens = 10;
  ro.tag = "t0";
  const auto trajs = training::sample_trajectories(teacher, vocab, inst, ro, 4);
  for (const auto& t : trajs) {
    REQUIRE(t.topk.size() == t.tokens.size());
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      CHECK(std::abs(t.stored_mass(j) - 1.0) < 1e-6);
      for (std::size_t k = 1; k < t.topk[j].size(); ++k) CHECK(t.topk[j][k - 1].logp >= t.topk[j][k].logp);
    }
  }
  const auto dir = std::filesystem::temp_directory_path() / "bcr_test_traj_store";
  std::filesystem::remove_all(dir);
  {
    training::TrajectoryWriter w(dir, vocab.size(), {{"note", "x"}});
    for (const auto& t : trajs) w.append(t);
  }
  const auto loaded = training::load_trajectories(dir);
  REQUIRE(loaded.trajectories.size() == trajs.size());
  CHECK(loaded.manifest.at("count") == 3);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& a = trajs[i];
    const auto& b = loaded.trajectories[i];
    CHECK(a.prompt == b.prompt);
    CHECK(a.tokens == b.tokens);
    CHECK(a.sampled_logp == b.sampled_logp);
    CHECK(a.reward == b.reward);
    CHECK(a.teacher_tag == b.teacher_tag);
    CHECK(a.task_seed == b.task_seed);
    for (std::size_t j = 0; j < a.topk.size(); ++j) {
      REQUIRE(a.topk[j].size() == b.topk[j].size());
      for (std::size_t k = 0; k < a.topk[j].size(); ++k) {
        CHECK(a.topk[j][k].id == b.topk[j][k].id);
        CHECK(a.topk[j][k].logp == b.topk[j][k].logp);
      }
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("rollouts do not depend on the number of worker threads") {
  const auto vocab = model::Vocabulary::standard();
  model::Transformer teacher(small_config(), model::Role::teacher, 6);
  const auto tc = tasks::TaskConfig::toy(tasks::TaskKind::linsys);
  std::vector<tasks::TaskInstance> inst;
  for (int i = 0; i < 5; ++i) inst.push_back(tasks::generate(tc, static_cast<std::uint64_t>(i)));
  training::RolloutOptions ro;
  ro.max_new_tokens = 8;
  const auto serial = training::sample_trajectories(teacher, vocab, inst, ro, 3);
  ro.jobs = 3;
  const auto threaded = training::sample_trajectories(teacher, vocab, inst, ro, 3);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    CHECK(serial[i].tokens == threaded[i].tokens);
    CHECK(serial[i].sampled_logp == threaded[i].sampled_logp);
  }
}

TEST_CASE("demonstrations score as intended") {
  std::mt19937_64 rng(1);
  for (auto kind : {tasks::TaskKind::countdown, tasks::TaskKind::linsys, tasks::TaskKind::stargraph}) {
    const auto tc = tasks::TaskConfig::toy(kind);
    for (std::uint64_t s = 0; s < 30; ++s) {
      const auto inst = tasks::generate(tc, s);
      CHECK(tasks::score(inst, training::demonstration(inst, true, rng)) == tasks::kRewardCorrect);
      if (kind != tasks::TaskKind::countdown) {
        CHECK(tasks::score(inst, training::demonstration(inst, false, rng)) < tasks::kRewardCorrect);
      }
    }
  }
  const auto inst = tasks::generate(tasks::TaskConfig::toy(tasks::TaskKind::stargraph), 2);
  const auto& p = std::get<tasks::StarGraphPayload>(inst.payload);
  const auto path = tasks::stargraph_path(p);
  // Walk back from the goal leaf to the start node.
  const std::string expected = std::to_string(path[2]) + std::to_string(path[1]) + std::to_string(path[0]) + "." +
                               "<answer>" + tasks::format_list(path) + "</answer>";
  CHECK(training::demonstration(inst, true, rng) == expected);
}

TEST_CASE("joint and two-step modes coincide on their first step") {
  // Before any PPO update the teacher is the same in both modes, and joint
  // mode distills from sampling-time distributions.
  const auto vocab = model::Vocabulary::standard();
  model::Transformer base(small_config(), model::Role::teacher, 1);
  training::PipelineOptions o;
  o.steps = 1;
  o.ppo.batch = o.ppo.minibatch = 4;
  o.ppo.max_new_tokens = 10;
  o.students = {training::DistillConfig::desk()};
  o.seed = 17;

  model::Transformer teacher_a = base.clone();
  model::Transformer critic = model::Transformer::derive(base, model::Role::critic, 2);
  model::Transformer student_a = model::Transformer::derive(base, model::Role::student, 3);
  model::Transformer student_b = student_a.clone();
  const auto ra = training::joint_rl_distill(teacher_a, critic, {&student_a}, vocab, o);
  const auto rb = training::two_step_distill(base, {&student_b}, vocab, o);
  CHECK(snapshot(student_a) == snapshot(student_b));
  CHECK(snapshot(teacher_a) != snapshot(base));
  CHECK(ra.samples == rb.samples);
  CHECK(ra.samples == 4);
}

TEST_CASE("two-step distillation lowers held-out student perplexity") {
  const auto vocab = model::Vocabulary::standard();
  model::Transformer teacher(small_config(), model::Role::teacher, 21);
  training::SftConfig sc;
  sc.steps = 40;
  sc.batch = 8;
  sc.lr = 3e-3f;
  training::sft_train(teacher, vocab, tasks::TaskConfig::toy(tasks::TaskKind::stargraph), sc, 1);
  model::Transformer student(small_config(), model::Role::student, 22);

  training::PipelineOptions o;
  o.steps = 25;
  o.ppo.batch = 8;
  o.ppo.max_new_tokens = 24;
  auto dc = training::DistillConfig::desk();
  dc.ratio_c = 4;
  dc.student_lr = 3e-3f;
  o.students = {dc};
  o.seed = 5;

  std::vector<tasks::TaskInstance> held;
  for (int i = 0; i < 8; ++i) {
    held.push_back(tasks::generate(o.tasks, training::eval_task_seed(static_cast<std::uint64_t>(i))));
  }
  training::RolloutOptions ro;
  ro.max_new_tokens = 24;
  const auto held_trajs = training::sample_trajectories(teacher, vocab, held, ro, 99);
  const double before = training::mean_token_nll(student, held_trajs, 4);
  const auto r = training::two_step_distill(teacher, {&student}, vocab, o);
  const double after = training::mean_token_nll(student, held_trajs, 4);
  MESSAGE("held-out nll " << before << " -> " << after);
  CHECK(after < before);
  CHECK(r.samples == 25 * 8);
  // Losses fall over the run (smoothed over five steps).
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += r.history[static_cast<std::size_t>(i)].students[0].loss;
    last += r.history[r.history.size() - 1 - static_cast<std::size_t>(i)].students[0].loss;
  }
  CHECK(last < first);
}

TEST_CASE("uncompressed distillation: KL falls over a smoothing window") {
  // c beyond the longest response makes the layout plain causal.
  const auto vocab = model::Vocabulary::standard();
  model::Transformer teacher(small_config(), model::Role::teacher, 31);
  model::Transformer critic = model::Transformer::derive(teacher, model::Role::critic, 32);
  model::Transformer student(small_config(), model::Role::student, 33);
  training::PipelineOptions o;
  o.steps = 20;
  o.ppo.batch = o.ppo.minibatch = 6;
  o.ppo.max_new_tokens = 16;
  auto dc = training::DistillConfig::desk();
  dc.ratio_c = 1000;
  dc.student_lr = 3e-3f;
  o.students = {dc};
  o.seed = 8;
  const auto r = training::joint_rl_distill(teacher, critic, {&student}, vocab, o);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += r.history[static_cast<std::size_t>(i)].students[0].loss;
    last += r.history[r.history.size() - 1 - static_cast<std::size_t>(i)].students[0].loss;
  }
  CHECK(last < first);
}

TEST_CASE("training configs round-trip and validate") {
  auto p = training::PpoConfig::desk();
  p.normalize_advantages = false;
  CHECK(training::PpoConfig::from_json(p.to_json()) == p);
  CHECK(training::PpoConfig::paper().actor_lr == doctest::Approx(1e-6));
  CHECK(training::PpoConfig::paper().batch == 256);
  auto d = training::DistillConfig::desk();
  d.ratio_c = 8;
  CHECK(training::DistillConfig::from_json(d.to_json()) == d);
  training::SftConfig s;
  s.p_correct = 0.25f;
  CHECK(training::SftConfig::from_json(s.to_json()) == s);
  CHECK_THROWS_AS(training::PpoConfig::from_json({{"clip", 0.1}}), std::invalid_argument);
  p.clip_ratio = 1.0f;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  d.top_k = 200;
  CHECK_THROWS_AS(d.validate(102), std::invalid_argument);
}

TEST_CASE("train and held-out task seeds never overlap") {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    CHECK((training::train_task_seed(3, training::SeedPurpose::train_tasks, i, i) >> 63) == 0);
    CHECK((training::eval_task_seed(i) >> 63) == 1);
  }
}
