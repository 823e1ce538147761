#include "bcr/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "bcr/training/rollout.hpp"
#include "bcr/training/seeds.hpp"

namespace bcr::eval {

const char* budget_name(Budget b) { return b == Budget::fixed_cache ? "fixed_cache" : "fixed_length"; }

Budget budget_from_name(const std::string& name) {
  if (name == "fixed_cache") return Budget::fixed_cache;
  if (name == "fixed_length") return Budget::fixed_length;
  throw std::invalid_argument("unknown budget kind '" + name + "' (expected fixed_cache or fixed_length)");
}

void EvalProtocol::validate() const {
  if (limit <= 0) throw std::invalid_argument("eval limit must be positive");
  if (n_instances <= 0) throw std::invalid_argument("eval n_instances must be positive");
  if (temperature < 0) throw std::invalid_argument("eval temperature must be >= 0");
  if (max_new_tokens < 0) throw std::invalid_argument("eval max_new_tokens must be >= 0");
}

nlohmann::json EvalProtocol::to_json() const {
  return {{"kind", budget_name(kind)},     {"limit", limit},      {"n_instances", n_instances},
          {"first_index", first_index},    {"temperature", temperature}, {"seed", seed},
          {"max_new_tokens", max_new_tokens}};
}

EvalProtocol EvalProtocol::from_json(const nlohmann::json& j) {
  EvalProtocol p;
  if (!j.is_object()) throw std::invalid_argument("eval protocol must be an object");
  const auto known = p.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown eval key '" + key + "'");
  }
  if (j.contains("kind")) p.kind = budget_from_name(j.at("kind").get<std::string>());
  if (j.contains("limit")) p.limit = j.at("limit").get<long>();
  if (j.contains("n_instances")) p.n_instances = j.at("n_instances").get<int>();
  if (j.contains("first_index")) p.first_index = j.at("first_index").get<std::uint64_t>();
  if (j.contains("temperature")) p.temperature = j.at("temperature").get<float>();
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("max_new_tokens")) p.max_new_tokens = j.at("max_new_tokens").get<long>();
  return p;
}

nlohmann::json Outcome::to_json() const {
  return {{"index", index},   {"task_seed", task_seed},         {"reward", reward},
          {"stopped", stopped}, {"usage", usage},               {"peak_entries", peak_entries},
          {"tokens", tokens}, {"response", response}};
}

Outcome Outcome::from_json(const nlohmann::json& j) {
  Outcome o;
  o.index = j.at("index").get<int>();
  o.task_seed = j.at("task_seed").get<std::uint64_t>();
  o.reward = j.at("reward").get<double>();
  o.stopped = j.at("stopped").get<bool>();
  o.usage = j.at("usage").get<long>();
  o.peak_entries = j.at("peak_entries").get<long>();
  o.tokens = j.at("tokens").get<long>();
  o.response = j.at("response").get<std::string>();
  return o;
}

double EvalCurve::acc_at_max() const {
  for (const auto& p : points) {
    if (p.budget == max_budget) return p.accuracy;
  }
  throw std::logic_error("curve lacks its maximum budget point");
}

std::vector<long> budget_grid(std::span<const Outcome> outcomes, long max_budget) {
  if (max_budget <= 0) throw std::invalid_argument("budget grid: max_budget must be positive");
  std::vector<long> grid{0};
  for (int k = 1; k <= 100; ++k) {
    grid.push_back(static_cast<long>(std::llround(static_cast<double>(max_budget) * k / 100.0)));
  }
  for (const auto& o : outcomes) {
    if (o.usage >= 0 && o.usage <= max_budget) grid.push_back(o.usage);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

EvalCurve curve_from_outcomes(std::span<const Outcome> outcomes, long max_budget) {
  EvalCurve curve;
  curve.max_budget = max_budget;
  curve.n = static_cast<int>(outcomes.size());
  for (long b : budget_grid(outcomes, max_budget)) {
    long hits = 0;
    for (const auto& o : outcomes) hits += o.correct_within(b) ? 1 : 0;
    curve.points.push_back({b, outcomes.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(outcomes.size())});
  }
  return curve;
}

double auac(const EvalCurve& curve, long max_budget) {
  if (curve.points.empty()) throw std::invalid_argument("auac: empty curve");
  if (max_budget <= 0) throw std::invalid_argument("auac: max_budget must be positive");
  const auto& pts = curve.points;
  // Twice the area, in long double: budgets are integers, so for a flat
  // curve every term and partial sum stays exact and the result is exact.
  long double twice = 0.0L;
  twice += 2.0L * static_cast<long double>(std::min(pts.front().budget, max_budget)) * pts.front().accuracy;
  for (std::size_t i = 1; i < pts.size() && pts[i - 1].budget < max_budget; ++i) {
    const long x0 = pts[i - 1].budget;
    const long x1 = std::min(pts[i].budget, max_budget);
    long double y1 = pts[i].accuracy;
    if (pts[i].budget > max_budget) {
      // Interpolate at the cut.
      const long double t = static_cast<long double>(x1 - x0) / static_cast<long double>(pts[i].budget - x0);
      y1 = pts[i - 1].accuracy + t * (static_cast<long double>(pts[i].accuracy) - pts[i - 1].accuracy);
    }
    twice += (static_cast<long double>(pts[i - 1].accuracy) + y1) * static_cast<long double>(x1 - x0);
  }
  if (pts.back().budget < max_budget) {
    twice += 2.0L * static_cast<long double>(max_budget - pts.back().budget) * pts.back().accuracy;
  }
  return static_cast<double>(twice / (2.0L * static_cast<long double>(max_budget)));
}

std::vector<tasks::TaskInstance> test_set(const tasks::TaskConfig& config, const EvalProtocol& protocol) {
  protocol.validate();
  std::vector<tasks::TaskInstance> out;
  out.reserve(static_cast<std::size_t>(protocol.n_instances));
  for (int i = 0; i < protocol.n_instances; ++i) {
    out.push_back(tasks::generate(config, training::eval_task_seed(protocol.first_index + static_cast<std::uint64_t>(i))));
  }
  return out;
}

Outcome run_episode(const model::StepPolicy& policy, const model::Vocabulary& vocab, const tasks::TaskInstance& instance,
                    const compression::CompressionRule& rule, const EvalProtocol& protocol, long budget, int index) {
  compression::Limits limits;
  if (protocol.kind == Budget::fixed_cache) {
    limits.max_cache = budget;
    limits.max_tokens = protocol.max_new_tokens;
  } else {
    limits.max_cache = 0;
    limits.max_tokens = budget;
  }
  compression::GenerationOptions gen;
  gen.temperature = protocol.temperature;
  gen.stop_id = vocab.stop();
  std::mt19937_64 rng(training::derive_seed({protocol.seed, static_cast<std::uint64_t>(training::SeedPurpose::eval_sampling),
                                             static_cast<std::uint64_t>(index)}));
  const auto prompt = vocab.tokenize(instance.prompt_text);
  Outcome o;
  o.index = index;
  o.task_seed = instance.seed;
  if (budget <= 0 || (protocol.kind == Budget::fixed_cache && static_cast<long>(prompt.size()) > budget)) {
    // Nothing fits; the episode never starts.
    o.usage = static_cast<long>(prompt.size());
    return o;
  }
  const auto r = compression::generate(policy, prompt, rule, limits, gen, rng);
  o.response = training::response_text(vocab, r.tokens);
  o.reward = tasks::score(instance, o.response);
  o.stopped = r.stopped_by == compression::StopReason::stop_token;
  o.peak_entries = r.peak_entries;
  o.tokens = static_cast<long>(r.tokens.size());
  o.usage = protocol.kind == Budget::fixed_cache ? r.peak_entries : o.tokens;
  return o;
}

EvalResult evaluate(const model::StepPolicy& policy, const model::Vocabulary& vocab,
                    std::span<const tasks::TaskInstance> instances, const compression::CompressionRule& rule,
                    const EvalProtocol& protocol, int jobs) {
  protocol.validate();
  rule.validate();
  EvalResult result;
  result.outcomes.resize(instances.size());
  training::parallel_for(static_cast<int>(instances.size()), jobs, [&](int i) {
    result.outcomes[static_cast<std::size_t>(i)] =
        run_episode(policy, vocab, instances[static_cast<std::size_t>(i)], rule, protocol, protocol.limit, i);
  });
  result.curve = curve_from_outcomes(result.outcomes, protocol.limit);
  result.acc_c = result.curve.acc_at_max();
  result.auac = auac(result.curve, protocol.limit);
  return result;
}

void write_outcomes_jsonl(const std::filesystem::path& file, std::span<const Outcome> outcomes) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& o : outcomes) out << o.to_json().dump() << '\n';
}

std::vector<Outcome> read_outcomes_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<Outcome> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(Outcome::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void write_curve_csv(std::ostream& os, std::span<const CurveRow> rows, bool header) {
  if (header) os << kCurveCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.task << ',' << r.model_tag << ',' << r.mode << ',' << r.ratio_c << ',' << r.budget << ','
       << fmt_double(r.accuracy) << ',' << r.n << '\n';
  }
}

std::vector<CurveRow> read_curve_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurveCsvHeader) {
    throw std::runtime_error(file.string() + ":1: expected header '" + kCurveCsvHeader + "'");
  }
  std::vector<CurveRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": expected 7 columns");
    try {
      rows.push_back({f[0], f[1], f[2], std::stoi(f[3]), std::stol(f[4]), std::stod(f[5]), std::stoi(f[6])});
    } catch (const std::exception&) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

std::vector<CurveRow> curve_rows(const EvalCurve& curve, const std::string& task, const std::string& model_tag,
                                 const std::string& mode, int ratio_c) {
  std::vector<CurveRow> rows;
  for (const auto& p : curve.points) rows.push_back({task, model_tag, mode, ratio_c, p.budget, p.accuracy, curve.n});
  return rows;
}

void write_svg(std::ostream& os, std::span<const CurveRow> rows, const std::string& title) {
  std::map<std::string, std::vector<const CurveRow*>> series;
  long max_budget = 1;
  for (const auto& r : rows) {
    series[r.model_tag + " " + r.mode + " c=" + std::to_string(r.ratio_c)].push_back(&r);
    max_budget = std::max(max_budget, r.budget);
  }
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const double w = 640, h = 400, left = 60, right = 200, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto x = [&](long b) { return left + pw * static_cast<double>(b) / static_cast<double>(max_budget); };
  auto y = [&](double a) { return top + ph * (1.0 - a); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left + pw << "\" y2=\"" << y(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left << "\" y2=\"" << y(1)
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double a = k / 4.0;
    os << "<text x=\"" << left - 8 << "\" y=\"" << y(a) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\" "
       << "text-anchor=\"end\">" << a << "</text>\n";
    const long b = max_budget * k / 4;
    os << "<text x=\"" << x(b) << "\" y=\"" << y(0) + 16 << "\" font-family=\"sans-serif\" font-size=\"10\" "
       << "text-anchor=\"middle\">" << b << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
     << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">budget</text>\n";
  int i = 0;
  for (const auto& [name, pts] : series) {
    const char* color = kColors[i % 7];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto* p : pts) os << x(p->budget) << ',' << y(p->accuracy) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 16 * i + 10 << "\" font-family=\"sans-serif\" "
       << "font-size=\"11\" fill=\"" << color << "\">" << name << "</text>\n";
    ++i;
  }
  os << "</svg>\n";
}

}  // namespace bcr::eval
