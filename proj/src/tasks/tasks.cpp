#include "bcr/tasks/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>

#include "bcr/tasks/rational.hpp"

namespace bcr::tasks {

const char* kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::countdown: return "countdown";
    case TaskKind::linsys: return "linsys";
    case TaskKind::stargraph: return "stargraph";
  }
  return "?";
}

TaskKind kind_from_name(const std::string& name) {
  if (name == "countdown") return TaskKind::countdown;
  if (name == "linsys") return TaskKind::linsys;
  if (name == "stargraph") return TaskKind::stargraph;
  throw std::invalid_argument("unknown task kind '" + name + "' (countdown|linsys|stargraph)");
}

const char* style_name(PromptStyle style) { return style == PromptStyle::full ? "full" : "toy"; }

PromptStyle style_from_name(const std::string& name) {
  if (name == "full") return PromptStyle::full;
  if (name == "toy") return PromptStyle::toy;
  throw std::invalid_argument("unknown prompt style '" + name + "' (full|toy)");
}

// ---------------------------------------------------------------- configs

TaskConfig TaskConfig::standard(TaskKind kind) {
  TaskConfig c;
  c.kind = kind;
  c.style = PromptStyle::full;
  return c;
}

TaskConfig TaskConfig::linsys_dense3() {
  TaskConfig c = standard(TaskKind::linsys);
  c.linsys = {.n_vars = 3, .max_abs_coef = 20, .max_nonzero = 0, .max_abs_solution = 10};
  return c;
}

TaskConfig TaskConfig::toy(TaskKind kind) {
  TaskConfig c;
  c.kind = kind;
  c.style = PromptStyle::toy;
  c.countdown = {.min_numbers = 3, .max_numbers = 3, .min_value = 1, .max_value = 9, .max_target = 20};
  c.linsys = {.n_vars = 2, .max_abs_coef = 5, .max_nonzero = 0, .max_abs_solution = 5};
  c.stargraph = {.branch_len = 2, .min_branches = 2, .max_branches = 4, .max_label = 9};
  return c;
}

void TaskConfig::validate() const {
  auto fail = [](const std::string& m) { throw TaskConfigError(m); };
  switch (kind) {
    case TaskKind::countdown: {
      const auto& c = countdown;
      if (c.min_numbers < 1 || c.max_numbers < c.min_numbers || c.max_numbers > 5) {
        fail("countdown: need 1 <= min_numbers <= max_numbers <= 5");
      }
      if (c.min_value < 1 || c.max_value < c.min_value) fail("countdown: need 1 <= min_value <= max_value");
      if (c.max_target < 1) fail("countdown: max_target must be >= 1");
      break;
    }
    case TaskKind::linsys: {
      const auto& c = linsys;
      if (c.n_vars < 1 || c.n_vars > 9) fail("linsys: n_vars must be in [1, 9]");
      if (c.max_abs_coef < 1) fail("linsys: max_abs_coef must be >= 1");
      if (c.max_nonzero < 0) fail("linsys: max_nonzero must be >= 0");
      if (c.max_abs_solution < 0) fail("linsys: max_abs_solution must be >= 0");
      break;
    }
    case TaskKind::stargraph: {
      const auto& c = stargraph;
      if (c.branch_len < 1) fail("stargraph: branch_len must be >= 1");
      if (c.min_branches < 1 || c.max_branches < c.min_branches) fail("stargraph: need 1 <= min_branches <= max_branches");
      if (1L + static_cast<long>(c.max_branches) * c.branch_len > c.max_label + 1L) {
        fail("stargraph: " + std::to_string(1 + c.max_branches * c.branch_len) + " nodes do not fit in labels [0, " +
             std::to_string(c.max_label) + "]");
      }
      break;
    }
  }
}

nlohmann::json TaskConfig::to_json() const {
  return {{"kind", kind_name(kind)},
          {"style", style_name(style)},
          {"countdown",
           {{"min_numbers", countdown.min_numbers},
            {"max_numbers", countdown.max_numbers},
            {"min_value", countdown.min_value},
            {"max_value", countdown.max_value},
            {"max_target", countdown.max_target}}},
          {"linsys",
           {{"n_vars", linsys.n_vars},
            {"max_abs_coef", linsys.max_abs_coef},
            {"max_nonzero", linsys.max_nonzero},
            {"max_abs_solution", linsys.max_abs_solution}}},
          {"stargraph",
           {{"branch_len", stargraph.branch_len},
            {"min_branches", stargraph.min_branches},
            {"max_branches", stargraph.max_branches},
            {"max_label", stargraph.max_label}}}};
}

TaskConfig TaskConfig::from_json(const nlohmann::json& j) {
  TaskConfig c;
  c.kind = kind_from_name(j.at("kind").get<std::string>());
  c.style = style_from_name(j.value("style", std::string("full")));
  if (j.contains("countdown")) {
    const auto& x = j["countdown"];
    c.countdown.min_numbers = x.value("min_numbers", c.countdown.min_numbers);
    c.countdown.max_numbers = x.value("max_numbers", c.countdown.max_numbers);
    c.countdown.min_value = x.value("min_value", c.countdown.min_value);
    c.countdown.max_value = x.value("max_value", c.countdown.max_value);
    c.countdown.max_target = x.value("max_target", c.countdown.max_target);
  }
  if (j.contains("linsys")) {
    const auto& x = j["linsys"];
    c.linsys.n_vars = x.value("n_vars", c.linsys.n_vars);
    c.linsys.max_abs_coef = x.value("max_abs_coef", c.linsys.max_abs_coef);
    c.linsys.max_nonzero = x.value("max_nonzero", c.linsys.max_nonzero);
    c.linsys.max_abs_solution = x.value("max_abs_solution", c.linsys.max_abs_solution);
  }
  if (j.contains("stargraph")) {
    const auto& x = j["stargraph"];
    c.stargraph.branch_len = x.value("branch_len", c.stargraph.branch_len);
    c.stargraph.min_branches = x.value("min_branches", c.stargraph.min_branches);
    c.stargraph.max_branches = x.value("max_branches", c.stargraph.max_branches);
    c.stargraph.max_label = x.value("max_label", c.stargraph.max_label);
  }
  c.validate();
  return c;
}

bool TaskConfig::operator==(const TaskConfig& o) const { return to_json() == o.to_json(); }

// ---------------------------------------------------------------- countdown search

namespace {

struct Item {
  Rational value;
  std::string expr;
  bool atomic;
};

std::string wrap(const Item& it) { return it.atomic ? it.expr : "(" + it.expr + ")"; }

// Visits every value obtainable by repeatedly combining two items with
// + - * /. Unused items stay in the list, so all subsets are covered.
void search(std::vector<Item>& items, const std::function<void(const Item&)>& visit) {
  for (const auto& it : items) visit(it);
  const std::size_t n = items.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Item a = items[i];
      const Item b = items[j];
      std::vector<Item> rest;
      for (std::size_t k = 0; k < n; ++k) {
        if (k != i && k != j) rest.push_back(items[k]);
      }
      auto recurse = [&](Rational v, std::string e) {
        rest.push_back({v, std::move(e), false});
        search(rest, visit);
        rest.pop_back();
      };
      try {
        recurse(a.value + b.value, wrap(a) + " + " + wrap(b));
        recurse(a.value * b.value, wrap(a) + " * " + wrap(b));
        recurse(a.value - b.value, wrap(a) + " - " + wrap(b));
        recurse(b.value - a.value, wrap(b) + " - " + wrap(a));
        if (!b.value.is_zero()) recurse(a.value / b.value, wrap(a) + " / " + wrap(b));
        if (!a.value.is_zero()) recurse(b.value / a.value, wrap(b) + " / " + wrap(a));
      } catch (const ArithmeticError&) {
      }
    }
  }
}

std::vector<Item> leaves(const std::vector<int>& numbers) {
  std::vector<Item> items;
  for (int v : numbers) items.push_back({Rational(v), std::to_string(v), true});
  return items;
}

}  // namespace

std::optional<std::string> solve_countdown(const std::vector<int>& numbers, int target) {
  std::optional<std::string> best;
  auto items = leaves(numbers);
  const Rational goal(target);
  search(items, [&](const Item& it) {
    if (it.value == goal && (!best || it.expr.size() < best->size())) best = it.expr;
  });
  return best;
}

std::vector<int> reachable_targets(const std::vector<int>& numbers, int max_target) {
  std::vector<char> hit(static_cast<std::size_t>(std::max(max_target, 0)) + 1, 0);
  auto items = leaves(numbers);
  search(items, [&](const Item& it) {
    if (it.value.is_integer() && it.value.num() >= 1 && it.value.num() <= max_target) {
      hit[static_cast<std::size_t>(it.value.num())] = 1;
    }
  });
  std::vector<int> out;
  for (int v = 1; v <= max_target; ++v) {
    if (hit[static_cast<std::size_t>(v)]) out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------- linear algebra

namespace {

// Gaussian elimination over exact fractions. Returns nullopt when singular.
std::optional<std::vector<Rational>> solve_exact(const std::vector<std::vector<int>>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  std::vector<std::vector<Rational>> m(n, std::vector<Rational>(n + 1));
  for (std::size_t r = 0; r < n; ++r) {
    if (a[r].size() != n) return std::nullopt;
    for (std::size_t c = 0; c < n; ++c) m[r][c] = Rational(a[r][c]);
    m[r][n] = Rational(b[r]);
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    while (pivot < n && m[pivot][col].is_zero()) ++pivot;
    if (pivot == n) return std::nullopt;
    std::swap(m[pivot], m[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || m[r][col].is_zero()) continue;
      const Rational f = m[r][col] / m[col][col];
      for (std::size_t c = col; c <= n; ++c) m[r][c] = m[r][c] - f * m[col][c];
    }
  }
  std::vector<Rational> x(n);
  for (std::size_t r = 0; r < n; ++r) x[r] = m[r][n] / m[r][r];
  return x;
}

std::string format_equation(const std::vector<int>& row, int rhs, bool compact) {
  std::string s;
  const std::string sp = compact ? "" : " ";
  bool first = true;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const int a = row[i];
    if (a == 0) continue;
    const std::string var = "x" + std::to_string(i + 1);
    const int mag = std::abs(a);
    const std::string term = mag == 1 ? var : std::to_string(mag) + "*" + var;
    if (first) {
      s += (a < 0 ? "-" : "") + term;
    } else {
      s += sp + (a < 0 ? "-" : "+") + sp + term;
    }
    first = false;
  }
  if (first) s += "0";
  s += sp + "=" + sp + std::to_string(rhs);
  return s;
}

// Parses "2*x1 - x2 + 3*x3 = 10" (spaces optional) into coefficients.
bool parse_equation(std::string_view line, int n_vars_hint, std::vector<int>& row, int& rhs) {
  std::string s;
  for (char ch : line) {
    if (ch != ' ') s += ch;
  }
  const auto eq = s.find('=');
  if (eq == std::string::npos) return false;
  const std::string lhs = s.substr(0, eq);
  try {
    std::size_t used = 0;
    rhs = std::stoi(s.substr(eq + 1), &used);
    if (used != s.size() - eq - 1) return false;
  } catch (...) {
    return false;
  }
  row.assign(static_cast<std::size_t>(std::max(n_vars_hint, 0)), 0);
  std::size_t i = 0;
  bool first = true;
  while (i < lhs.size()) {
    int sign = 1;
    if (lhs[i] == '+' || lhs[i] == '-') {
      sign = lhs[i] == '-' ? -1 : 1;
      ++i;
    } else if (!first) {
      return false;
    }
    first = false;
    int coef = 1;
    if (i < lhs.size() && std::isdigit(static_cast<unsigned char>(lhs[i]))) {
      std::size_t j = i;
      while (j < lhs.size() && std::isdigit(static_cast<unsigned char>(lhs[j]))) ++j;
      coef = std::stoi(lhs.substr(i, j - i));
      i = j;
      if (i >= lhs.size() || lhs[i] != '*') return false;
      ++i;
    }
    if (i >= lhs.size() || lhs[i] != 'x') return false;
    ++i;
    std::size_t j = i;
    while (j < lhs.size() && std::isdigit(static_cast<unsigned char>(lhs[j]))) ++j;
    if (j == i) return false;
    const int var = std::stoi(lhs.substr(i, j - i));
    i = j;
    if (var < 1) return false;
    if (static_cast<int>(row.size()) < var) row.resize(static_cast<std::size_t>(var), 0);
    row[static_cast<std::size_t>(var - 1)] += sign * coef;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------- generation

namespace {

std::uint64_t mix_seed(std::uint64_t seed, TaskKind kind) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(kind) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

CountdownPayload generate_countdown(const CountdownConfig& c, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    CountdownPayload p;
    const int n = uniform_int(rng, c.min_numbers, c.max_numbers);
    for (int i = 0; i < n; ++i) p.numbers.push_back(uniform_int(rng, c.min_value, c.max_value));
    const auto targets = reachable_targets(p.numbers, c.max_target);
    if (targets.empty()) continue;
    p.target = targets[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(targets.size()) - 1))];
    return p;
  }
  throw TaskConfigError("countdown: no solvable instance found in 1000 attempts");
}

LinSysPayload generate_linsys(const LinSysConfig& c, std::mt19937_64& rng) {
  const int n = c.n_vars;
  const int per_row = c.max_nonzero == 0 ? n : std::min(c.max_nonzero, n);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    LinSysPayload p;
    for (int i = 0; i < n; ++i) p.solution.push_back(uniform_int(rng, -c.max_abs_solution, c.max_abs_solution));
    p.coefficients.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
    for (auto& row : p.coefficients) {
      std::vector<int> cols(static_cast<std::size_t>(n));
      std::iota(cols.begin(), cols.end(), 0);
      std::shuffle(cols.begin(), cols.end(), rng);
      const int k = uniform_int(rng, 1, per_row);
      for (int t = 0; t < k; ++t) {
        int v = 0;
        while (v == 0) v = uniform_int(rng, -c.max_abs_coef, c.max_abs_coef);
        row[static_cast<std::size_t>(cols[static_cast<std::size_t>(t)])] = v;
      }
    }
    for (const auto& row : p.coefficients) {
      long s = 0;
      for (int i = 0; i < n; ++i) s += static_cast<long>(row[static_cast<std::size_t>(i)]) * p.solution[static_cast<std::size_t>(i)];
      p.rhs.push_back(static_cast<int>(s));
    }
    if (solve_exact(p.coefficients, p.rhs)) return p;
  }
  throw TaskConfigError("linsys: no full-rank system found in 1000 attempts");
}

StarGraphPayload generate_stargraph(const StarGraphConfig& c, std::mt19937_64& rng) {
  const int branches = uniform_int(rng, c.min_branches, c.max_branches);
  const int n_nodes = 1 + branches * c.branch_len;
  // Partial Fisher-Yates over the label range picks distinct labels.
  std::vector<int> labels(static_cast<std::size_t>(c.max_label) + 1);
  std::iota(labels.begin(), labels.end(), 0);
  for (int i = 0; i < n_nodes; ++i) {
    const int j = uniform_int(rng, i, c.max_label);
    std::swap(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
  }
  labels.resize(static_cast<std::size_t>(n_nodes));
  StarGraphPayload p;
  p.center = labels[0];
  std::vector<int> leaves;
  for (int b = 0; b < branches; ++b) {
    int prev = p.center;
    for (int s = 0; s < c.branch_len; ++s) {
      const int node = labels[static_cast<std::size_t>(1 + b * c.branch_len + s)];
      p.edges.emplace_back(prev, node);
      prev = node;
    }
    leaves.push_back(prev);
  }
  p.target = leaves[static_cast<std::size_t>(uniform_int(rng, 0, branches - 1))];
  std::shuffle(p.edges.begin(), p.edges.end(), rng);
  p.nodes = labels;
  std::shuffle(p.nodes.begin(), p.nodes.end(), rng);
  return p;
}

}  // namespace

TaskInstance generate(const TaskConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(mix_seed(seed, config.kind));
  TaskInstance t;
  t.kind = config.kind;
  t.seed = seed;
  t.style = config.style;
  switch (config.kind) {
    case TaskKind::countdown: t.payload = generate_countdown(config.countdown, rng); break;
    case TaskKind::linsys: t.payload = generate_linsys(config.linsys, rng); break;
    case TaskKind::stargraph: t.payload = generate_stargraph(config.stargraph, rng); break;
  }
  t.prompt_text = render_prompt(t);
  return t;
}

std::vector<TaskInstance> generate_range(const TaskConfig& config, std::uint64_t first_seed, int count) {
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate(config, first_seed + static_cast<std::uint64_t>(i)));
  return out;
}

// ---------------------------------------------------------------- rendering

std::string format_list(const std::vector<int>& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(values[i]);
  }
  return s + "]";
}

namespace {

std::string join(const std::vector<int>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string render_prompt(TaskKind kind, const Payload& payload, PromptStyle style) {
  const bool toy = style == PromptStyle::toy;
  std::ostringstream os;
  switch (kind) {
    case TaskKind::countdown: {
      const auto& p = std::get<CountdownPayload>(payload);
      if (toy) {
        os << "N:" << join(p.numbers, ",") << " T:" << p.target << "\n";
      } else {
        os << "Using the numbers " << join(p.numbers, ", ") << ", create an equation that equals " << p.target
           << ". You can use basic arithmetic operations (+, -, *, /) and each number can only be used once. "
              "Make sure to solve it by thinking step by step. Return the final answer in <answer> </answer> tags, "
              "for example <answer> (1 + 2) / 3 </answer>.";
      }
      break;
    }
    case TaskKind::linsys: {
      const auto& p = std::get<LinSysPayload>(payload);
      const std::size_t n = p.coefficients.size();
      if (toy) {
        os << "E:";
        for (std::size_t i = 0; i < n; ++i) os << (i ? ";" : "") << format_equation(p.coefficients[i], p.rhs[i], true);
        os << "\n";
      } else {
        os << "Solve the following system of linear equations:\n";
        for (std::size_t i = 0; i < n; ++i) os << format_equation(p.coefficients[i], p.rhs[i], false) << "\n";
        os << "Find the values for ";
        if (n <= 3) {
          for (std::size_t i = 0; i < n; ++i) os << (i ? ", " : "") << "x" << i + 1;
        } else {
          os << "x1, x2, ..., x" << n;
        }
        os << ". Make sure to solve it by thinking step by step, and do not assume access to any external tools.\n"
              "Return the final answer as a list of numbers in <answer> </answer> tags, for example "
              "<answer>[1, -2, 3, 7]</answer>.";
      }
      break;
    }
    case TaskKind::stargraph: {
      const auto& p = std::get<StarGraphPayload>(payload);
      if (toy) {
        // Edges child first: "06" is 6 -> 0. Multi-digit labels get a '<'.
        os << "G:";
        for (std::size_t i = 0; i < p.edges.size(); ++i) {
          const auto [from, to] = p.edges[i];
          os << (i ? "," : "") << to << (from > 9 || to > 9 ? "<" : "") << from;
        }
        os << " S:" << p.center << " T:" << p.target << "\n";
      } else {
        os << "You are given a star graph with the following nodes: " << join(p.nodes, ", ") << ".\n\n"
           << "The graph has the following directed edges:\n";
        for (const auto& [a, b] : p.edges) os << a << " -> " << b << "\n";
        os << "\nFind the path from the center node " << p.center << " to the target node " << p.target << ".\n\n"
           << "Think step by step about the graph structure and trace the path from the center node to the target "
              "node.\nReturn your answer as a list of nodes representing the path from center to target.\n"
              "Return the final answer in <answer> </answer> tags, for example <answer>[1, 3, 7, 12]</answer>.";
      }
      break;
    }
  }
  return os.str();
}

// ---------------------------------------------------------------- prompt parsing

namespace {

std::vector<int> parse_int_csv(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    const auto first = part.find_first_not_of(' ');
    if (first == std::string::npos) throw std::invalid_argument("empty list item");
    out.push_back(std::stoi(part.substr(first), &used));
    if (part.find_first_not_of(' ', first + used) != std::string::npos) throw std::invalid_argument("bad list item");
  }
  return out;
}

LinSysPayload linsys_from_equations(const std::vector<std::string>& lines) {
  LinSysPayload p;
  const int n = static_cast<int>(lines.size());
  for (const auto& line : lines) {
    std::vector<int> row;
    int rhs = 0;
    if (!parse_equation(line, n, row, rhs) || static_cast<int>(row.size()) != n) {
      throw std::invalid_argument("parse_prompt: bad equation '" + line + "'");
    }
    p.coefficients.push_back(row);
    p.rhs.push_back(rhs);
  }
  auto x = solve_exact(p.coefficients, p.rhs);
  if (!x) throw std::invalid_argument("parse_prompt: singular system");
  for (const auto& v : *x) {
    if (!v.is_integer()) throw std::invalid_argument("parse_prompt: non-integer solution");
    p.solution.push_back(static_cast<int>(v.num()));
  }
  return p;
}

}  // namespace

Payload parse_prompt(TaskKind kind, std::string_view text_view) {
  const std::string text(text_view);
  std::smatch m;
  switch (kind) {
    case TaskKind::countdown: {
      static const std::regex toy(R"(^N:([0-9,]+) T:([0-9]+)\n$)");
      static const std::regex full(R"(^Using the numbers ([0-9, ]+), create an equation that equals ([0-9]+)\.)");
      if (std::regex_match(text, m, toy) || std::regex_search(text, m, full)) {
        return CountdownPayload{parse_int_csv(m[1]), std::stoi(m[2])};
      }
      break;
    }
    case TaskKind::linsys: {
      std::vector<std::string> lines;
      if (text.rfind("E:", 0) == 0) {
        std::stringstream ss(text.substr(2, text.size() - (text.back() == '\n' ? 3 : 2)));
        std::string eq;
        while (std::getline(ss, eq, ';')) lines.push_back(eq);
        return linsys_from_equations(lines);
      }
      const std::string head = "Solve the following system of linear equations:\n";
      if (text.rfind(head, 0) == 0) {
        std::stringstream ss(text.substr(head.size()));
        std::string line;
        while (std::getline(ss, line) && line.rfind("Find the values", 0) != 0) lines.push_back(line);
        return linsys_from_equations(lines);
      }
      break;
    }
    case TaskKind::stargraph: {
      static const std::regex toy(R"(^G:([0-9,<]+) S:([0-9]+) T:([0-9]+)\n$)");
      if (std::regex_match(text, m, toy)) {
        StarGraphPayload p;
        std::stringstream ss(m[1].str());
        std::string edge;
        while (std::getline(ss, edge, ',')) {
          const auto mark = edge.find('<');
          if (mark != std::string::npos && mark > 0 && mark + 1 < edge.size()) {
            p.edges.emplace_back(std::stoi(edge.substr(mark + 1)), std::stoi(edge.substr(0, mark)));
          } else if (mark == std::string::npos && edge.size() == 2) {
            p.edges.emplace_back(edge[1] - '0', edge[0] - '0');
          } else {
            throw std::invalid_argument("parse_prompt: bad edge " + edge);
          }
        }
        p.center = std::stoi(m[2]);
        p.target = std::stoi(m[3]);
        return p;
      }
      static const std::regex nodes_re(R"(following nodes: ([0-9, ]+)\.\n)");
      static const std::regex edge_re(R"((\d+) -> (\d+)\n)");
      static const std::regex ends_re(R"(from the center node (\d+) to the target node (\d+)\.)");
      std::smatch e;
      if (std::regex_search(text, m, nodes_re) && std::regex_search(text, e, ends_re)) {
        StarGraphPayload p;
        p.nodes = parse_int_csv(m[1]);
        p.center = std::stoi(e[1]);
        p.target = std::stoi(e[2]);
        for (auto it = std::sregex_iterator(text.begin(), text.end(), edge_re); it != std::sregex_iterator(); ++it) {
          p.edges.emplace_back(std::stoi((*it)[1]), std::stoi((*it)[2]));
        }
        return p;
      }
      break;
    }
  }
  throw std::invalid_argument(std::string("parse_prompt: text is not a ") + kind_name(kind) + " prompt");
}

// ---------------------------------------------------------------- scoring

std::optional<std::string> extract_answer(std::string_view text) {
  static constexpr std::string_view open = "<answer>";
  static constexpr std::string_view close = "</answer>";
  const auto end = text.rfind(close);
  if (end == std::string_view::npos) return std::nullopt;
  const auto begin = text.substr(0, end).rfind(open);
  if (begin == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(begin + open.size(), end - begin - open.size()));
}

namespace {

class ExpressionParser {
 public:
  explicit ExpressionParser(std::string_view s) : s_(s) {}

  // Throws std::invalid_argument on syntax errors, ArithmeticError on
  // division by zero or overflow.
  Rational parse_all() {
    Rational v = expr();
    skip();
    if (i_ != s_.size()) throw std::invalid_argument("trailing characters");
    return v;
  }

  const std::vector<int>& numbers() const { return numbers_; }

 private:
  void skip() {
    while (i_ < s_.size() && s_[i_] == ' ') ++i_;
  }
  bool accept(char ch) {
    skip();
    if (i_ < s_.size() && s_[i_] == ch) {
      ++i_;
      return true;
    }
    return false;
  }
  Rational expr() {
    Rational v = term();
    for (;;) {
      if (accept('+')) v = v + term();
      else if (accept('-')) v = v - term();
      else return v;
    }
  }
  Rational term() {
    Rational v = factor();
    for (;;) {
      if (accept('*')) v = v * factor();
      else if (accept('/')) v = v / factor();
      else return v;
    }
  }
  Rational factor() {
    if (++depth_ > 200) throw std::invalid_argument("nesting too deep");
    Rational v;
    if (accept('(')) {
      v = expr();
      if (!accept(')')) throw std::invalid_argument("missing )");
    } else {
      skip();
      const std::size_t start = i_;
      while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
      if (i_ == start || i_ - start > 9) throw std::invalid_argument("expected a number");
      const int n = std::stoi(std::string(s_.substr(start, i_ - start)));
      numbers_.push_back(n);
      v = Rational(n);
    }
    --depth_;
    return v;
  }

  std::string_view s_;
  std::size_t i_ = 0;
  int depth_ = 0;
  std::vector<int> numbers_;
};

// "[1, -2, 3]" with optional surrounding spaces; nullopt when malformed.
std::optional<std::vector<int>> parse_int_list(std::string_view content) {
  std::string s(content);
  const auto first = s.find_first_not_of(' ');
  const auto last = s.find_last_not_of(' ');
  if (first == std::string::npos || s[first] != '[' || s[last] != ']') return std::nullopt;
  const std::string inner = s.substr(first + 1, last - first - 1);
  if (inner.find_first_not_of(' ') == std::string::npos) return std::nullopt;
  std::vector<int> out;
  std::size_t i = 0;
  while (true) {
    while (i < inner.size() && inner[i] == ' ') ++i;
    std::size_t j = i;
    if (j < inner.size() && inner[j] == '-') ++j;
    const std::size_t digits = j;
    while (j < inner.size() && std::isdigit(static_cast<unsigned char>(inner[j]))) ++j;
    if (j == digits || j - digits > 9) return std::nullopt;
    out.push_back(std::stoi(inner.substr(i, j - i)));
    i = j;
    while (i < inner.size() && inner[i] == ' ') ++i;
    if (i == inner.size()) break;
    if (inner[i] != ',') return std::nullopt;
    ++i;
  }
  return out;
}

double score_countdown(const CountdownPayload& p, const std::string& content) {
  ExpressionParser parser(content);
  Rational value;
  try {
    value = parser.parse_all();
  } catch (const std::exception&) {
    return kRewardWrong;
  }
  std::vector<int> available = p.numbers;
  for (int n : parser.numbers()) {
    auto it = std::find(available.begin(), available.end(), n);
    if (it == available.end()) return kRewardFormatOnly;
    available.erase(it);
  }
  return value == Rational(p.target) ? kRewardCorrect : kRewardFormatOnly;
}

double score_linsys(const LinSysPayload& p, const std::string& content) {
  auto values = parse_int_list(content);
  if (!values || values->size() != p.solution.size()) return kRewardWrong;
  return *values == p.solution ? kRewardCorrect : kRewardFormatOnly;
}

double score_stargraph(const StarGraphPayload& p, const std::string& content) {
  auto path = parse_int_list(content);
  if (!path) return kRewardWrong;
  if (path->front() != p.center || path->back() != p.target || path->size() < 2) return kRewardFormatOnly;
  for (std::size_t i = 0; i + 1 < path->size(); ++i) {
    const std::pair<int, int> e{(*path)[i], (*path)[i + 1]};
    if (std::find(p.edges.begin(), p.edges.end(), e) == p.edges.end()) return kRewardFormatOnly;
  }
  return kRewardCorrect;
}

}  // namespace

double score(const TaskInstance& instance, std::string_view generated_text) {
  try {
    const auto content = extract_answer(generated_text);
    if (!content) return kRewardWrong;
    switch (instance.kind) {
      case TaskKind::countdown: return score_countdown(std::get<CountdownPayload>(instance.payload), *content);
      case TaskKind::linsys: return score_linsys(std::get<LinSysPayload>(instance.payload), *content);
      case TaskKind::stargraph: return score_stargraph(std::get<StarGraphPayload>(instance.payload), *content);
    }
  } catch (...) {
  }
  return kRewardWrong;
}

std::vector<int> stargraph_path(const StarGraphPayload& p) {
  std::vector<int> path{p.target};
  while (path.back() != p.center) {
    auto it = std::find_if(p.edges.begin(), p.edges.end(), [&](const auto& e) { return e.second == path.back(); });
    if (it == p.edges.end() || path.size() > p.edges.size() + 1) {
      throw std::invalid_argument("stargraph: target not reachable from center");
    }
    path.push_back(it->first);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::string reference_answer(const TaskInstance& instance) {
  switch (instance.kind) {
    case TaskKind::countdown: {
      const auto& p = std::get<CountdownPayload>(instance.payload);
      auto expr = solve_countdown(p.numbers, p.target);
      if (!expr) throw std::invalid_argument("countdown instance has no solution");
      return *expr;
    }
    case TaskKind::linsys: return format_list(std::get<LinSysPayload>(instance.payload).solution);
    case TaskKind::stargraph: return format_list(stargraph_path(std::get<StarGraphPayload>(instance.payload)));
  }
  return {};
}

// ---------------------------------------------------------------- serialization

nlohmann::json TaskInstance::to_json() const {
  nlohmann::json j{{"kind", kind_name(kind)}, {"seed", seed}, {"style", style_name(style)}};
  switch (kind) {
    case TaskKind::countdown: {
      const auto& p = std::get<CountdownPayload>(payload);
      j["payload"] = {{"numbers", p.numbers}, {"target", p.target}};
      break;
    }
    case TaskKind::linsys: {
      const auto& p = std::get<LinSysPayload>(payload);
      j["payload"] = {{"coefficients", p.coefficients}, {"rhs", p.rhs}, {"solution", p.solution}};
      break;
    }
    case TaskKind::stargraph: {
      const auto& p = std::get<StarGraphPayload>(payload);
      j["payload"] = {{"nodes", p.nodes}, {"edges", p.edges}, {"center", p.center}, {"target", p.target}};
      break;
    }
  }
  j["prompt"] = prompt_text;
  return j;
}

TaskInstance TaskInstance::from_json(const nlohmann::json& j) {
  TaskInstance t;
  t.kind = kind_from_name(j.at("kind").get<std::string>());
  t.seed = j.at("seed").get<std::uint64_t>();
  t.style = style_from_name(j.value("style", std::string("full")));
  const auto& p = j.at("payload");
  switch (t.kind) {
    case TaskKind::countdown:
      t.payload = CountdownPayload{p.at("numbers").get<std::vector<int>>(), p.at("target").get<int>()};
      break;
    case TaskKind::linsys:
      t.payload = LinSysPayload{p.at("coefficients").get<std::vector<std::vector<int>>>(),
                                p.at("rhs").get<std::vector<int>>(), p.at("solution").get<std::vector<int>>()};
      break;
    case TaskKind::stargraph:
      t.payload = StarGraphPayload{p.at("nodes").get<std::vector<int>>(),
                                   p.at("edges").get<std::vector<std::pair<int, int>>>(), p.at("center").get<int>(),
                                   p.at("target").get<int>()};
      break;
  }
  t.prompt_text = j.contains("prompt") ? j["prompt"].get<std::string>() : render_prompt(t);
  return t;
}

void write_jsonl(const std::filesystem::path& file, const std::vector<TaskInstance>& instances) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& t : instances) out << t.to_json().dump() << '\n';
}

std::vector<TaskInstance> read_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<TaskInstance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(TaskInstance::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace bcr::tasks
