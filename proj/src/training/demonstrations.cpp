#include "bcr/training/demonstrations.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "bcr/nn/adamw.hpp"
#include "bcr/nn/ops.hpp"
#include "bcr/training/losses.hpp"
#include "bcr/training/seeds.hpp"

namespace bcr::training {

namespace {

std::string tagged(const std::string& body) { return "<answer>" + body + "</answer>"; }

std::string stargraph_demo(const tasks::StarGraphPayload& p, bool correct, std::mt19937_64& rng) {
  int leaf = p.target;
  if (!correct) {
    std::set<int> sources;
    for (const auto& [a, b] : p.edges) sources.insert(a);
    std::vector<int> others;
    for (const auto& [a, b] : p.edges) {
      if (!sources.contains(b) && b != p.target) others.push_back(b);
    }
    if (!others.empty()) leaf = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
  }
  tasks::StarGraphPayload walk = p;
  walk.target = leaf;
  const auto path = tasks::stargraph_path(walk);
  // Walk back from the leaf one node per step. In the toy prompt each edge is
  // written child first, so the next node is the one that followed the
  // current node there.
  const bool wide = std::any_of(path.begin(), path.end(), [](int v) { return v > 9; });
  std::string text;
  for (std::size_t i = path.size(); i-- > 0;) {
    if (wide && !text.empty()) text += '<';
    text += std::to_string(path[i]);
  }
  return text + "." + tagged(tasks::format_list(path));
}

std::string countdown_demo(const tasks::CountdownPayload& p, bool correct, std::mt19937_64& rng) {
  if (correct) {
    if (auto expr = tasks::solve_countdown(p.numbers, p.target)) return tagged(*expr);
  }
  auto numbers = p.numbers;
  std::shuffle(numbers.begin(), numbers.end(), rng);
  static constexpr char kOps[] = {'+', '-', '*'};
  std::string expr = std::to_string(numbers[0]);
  for (std::size_t i = 1; i < numbers.size(); ++i) {
    const char op = kOps[std::uniform_int_distribution<int>(0, 2)(rng)];
    expr = (i > 1 ? "(" + expr + ")" : expr) + " " + op + " " + std::to_string(numbers[i]);
  }
  return tagged(expr);
}

std::string linsys_demo(const tasks::LinSysPayload& p, bool correct, std::mt19937_64& rng) {
  auto values = p.solution;
  if (!correct) {
    auto& v = values[std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng)];
    v += std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  }
  return tagged(tasks::format_list(values));
}

}  // namespace

std::string demonstration(const tasks::TaskInstance& instance, bool correct, std::mt19937_64& rng) {
  switch (instance.kind) {
    case tasks::TaskKind::stargraph:
      return stargraph_demo(std::get<tasks::StarGraphPayload>(instance.payload), correct, rng);
    case tasks::TaskKind::countdown:
      return countdown_demo(std::get<tasks::CountdownPayload>(instance.payload), correct, rng);
    case tasks::TaskKind::linsys:
      return linsys_demo(std::get<tasks::LinSysPayload>(instance.payload), correct, rng);
  }
  throw std::invalid_argument("demonstration: unknown task kind");
}

std::pair<std::string, std::string> copy_drill(std::mt19937_64& rng) {
  const int n = std::uniform_int_distribution<int>(8, 30)(rng);
  std::string digits;
  for (int i = 0; i < n; ++i) digits += static_cast<char>('0' + std::uniform_int_distribution<int>(0, 9)(rng));
  return {"R:" + digits + "|", digits};
}

double sft_train(model::Transformer& model, const model::Vocabulary& vocab, const tasks::TaskConfig& task_config,
                 const SftConfig& config, std::uint64_t seed, const std::function<void(const SftProgress&)>& on_step) {
  config.validate();
  model.set_requires_grad(true);
  nn::AdamWConfig opt_config;
  opt_config.learning_rate = config.lr;
  opt_config.weight_decay = config.weight_decay;
  opt_config.max_grad_norm = config.max_grad_norm;
  nn::AdamW opt(model.parameters(), opt_config, model.parameter_names());

  const int n_copy = static_cast<int>(std::lround(config.copy_fraction * static_cast<float>(config.batch)));
  double last = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(SeedPurpose::sft), static_cast<std::uint64_t>(step)}));
    std::vector<std::vector<int>> inputs(static_cast<std::size_t>(config.batch));
    std::vector<int> rows, targets;
    int offset = 0;
    for (int b = 0; b < config.batch; ++b) {
      std::vector<int> prompt, response;
      if (b < n_copy) {
        const auto [p, r] = copy_drill(rng);
        prompt = vocab.tokenize(p);
        response = vocab.tokenize(r);
      } else {
        const auto inst =
            tasks::generate(task_config, train_task_seed(seed, SeedPurpose::sft, static_cast<std::uint64_t>(step),
                                                         static_cast<std::uint64_t>(b)));
        const bool correct = std::bernoulli_distribution(config.p_correct)(rng);
        prompt = vocab.tokenize(inst.prompt_text);
        response = vocab.tokenize(demonstration(inst, correct, rng));
      }
      response.push_back(vocab.stop());
      auto& seq = inputs[static_cast<std::size_t>(b)];
      seq = prompt;
      seq.insert(seq.end(), response.begin(), response.end() - 1);
      if (static_cast<int>(seq.size()) > model.config().max_positions) {
        throw std::invalid_argument("sft: demonstration longer than max_positions");
      }
      for (std::size_t j = 0; j < response.size(); ++j) {
        rows.push_back(offset + static_cast<int>(prompt.size() + j) - 1);
        targets.push_back(response[j]);
      }
      offset += static_cast<int>(seq.size());
    }
    std::vector<model::SequenceView> views;
    for (const auto& s : inputs) views.push_back({s, {}, nullptr});
    if (step < config.warmup_steps) {
      opt.config().learning_rate = config.lr * static_cast<float>(step + 1) / static_cast<float>(config.warmup_steps);
    } else {
      const double t = static_cast<double>(step - config.warmup_steps) / std::max(1, config.steps - config.warmup_steps);
      opt.config().learning_rate = static_cast<float>(config.lr * (0.1 + 0.45 * (1.0 + std::cos(M_PI * t))));
    }
    opt.zero_grad();
    nn::Tensor logits = model.lm_logits(nn::embedding(model.hidden_states(views), rows));
    // Token mean: long demonstrations should not be down-weighted against drills.
    nn::Tensor loss = sequence_nll(logits, targets, std::vector<int>(targets.size(), 0), 1);
    last = loss.item();
    if (!std::isfinite(last)) throw std::runtime_error("sft: non-finite loss at step " + std::to_string(step));
    loss.backward();
    opt.step();
    if (on_step) on_step({step, last});
  }
  model.set_requires_grad(false);
  return last;
}

}  // namespace bcr::training
