#include "bcr/cli/run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bcr::cli {

ConfigError::ConfigError(const std::string& file, int line, int column, const std::string& message)
    : std::runtime_error(file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

namespace {

struct Source {
  std::string file;
  [[noreturn]] void fail(const YAML::Mark& mark, const std::string& message) const {
    throw ConfigError(file, mark.line + 1, mark.column + 1, message);
  }
};

std::string known_keys(const nlohmann::json& schema) {
  std::string out;
  for (const auto& [k, _] : schema.items()) out += (out.empty() ? "" : ", ") + k;
  return out;
}

// Converts `node` into JSON shaped like `schema` (a default-valued instance).
nlohmann::json convert(const YAML::Node& node, const nlohmann::json& schema, const std::string& where,
                       const Source& src) {
  try {
    if (schema.is_object()) {
      if (!node.IsMap()) src.fail(node.Mark(), "'" + where + "' must be a mapping");
      nlohmann::json out = nlohmann::json::object();
      for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!schema.contains(key)) {
          src.fail(kv.first.Mark(), "unknown key '" + key + "' in '" + where + "' (expected one of: " +
                                        known_keys(schema) + ")");
        }
        out[key] = convert(kv.second, schema[key], where + "." + key, src);
      }
      return out;
    }
    if (schema.is_array()) {
      if (!node.IsSequence()) src.fail(node.Mark(), "'" + where + "' must be a list");
      const nlohmann::json element = schema.empty() ? nlohmann::json(0) : schema[0];
      nlohmann::json out = nlohmann::json::array();
      for (const auto& item : node) out.push_back(convert(item, element, where + "[]", src));
      return out;
    }
    if (!node.IsScalar()) src.fail(node.Mark(), "'" + where + "' must be a single value");
    if (schema.is_boolean()) return node.as<bool>();
    if (schema.is_number_unsigned()) return node.as<std::uint64_t>();
    if (schema.is_number_integer()) return node.as<long long>();
    if (schema.is_number_float()) return node.as<double>();
    return node.as<std::string>();
  } catch (const YAML::BadConversion&) {
    const char* what = schema.is_boolean()                                          ? "true or false"
                       : schema.is_number_integer() || schema.is_number_unsigned() ? "an integer"
                       : schema.is_number_float()                                   ? "a number"
                                                                                    : "a string";
    src.fail(node.Mark(), "'" + where + "' must be " + what);
  }
}

tasks::TaskConfig task_preset(const std::string& kind, const std::string& preset) {
  const auto k = tasks::kind_from_name(kind);
  if (preset == "toy") return tasks::TaskConfig::toy(k);
  if (preset == "standard") return tasks::TaskConfig::standard(k);
  if (preset == "linsys_dense3") {
    if (k != tasks::TaskKind::linsys) throw std::invalid_argument("preset linsys_dense3 needs kind linsys");
    return tasks::TaskConfig::linsys_dense3();
  }
  throw std::invalid_argument("unknown task preset '" + preset + "' (expected toy, standard or linsys_dense3)");
}

nlohmann::json distill_schema(const training::DistillConfig& d) {
  auto j = d.to_json();
  j.erase("ratio_c");
  return j;
}

nlohmann::json train_json(const TrainSchedule& t) {
  return {{"steps", t.steps},
          {"target_accuracy", t.target_accuracy},
          {"accuracy_window", t.accuracy_window},
          {"extra_steps", t.extra_steps},
          {"checkpoint_every", t.checkpoint_every},
          {"store_top_k", t.store_top_k}};
}

TrainSchedule train_from_json(const nlohmann::json& j) {
  TrainSchedule t;
  t.steps = j.value("steps", t.steps);
  t.target_accuracy = j.value("target_accuracy", t.target_accuracy);
  t.accuracy_window = j.value("accuracy_window", t.accuracy_window);
  t.extra_steps = j.value("extra_steps", t.extra_steps);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.store_top_k = j.value("store_top_k", t.store_top_k);
  return t;
}

void emit(YAML::Emitter& out, const nlohmann::json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [k, v] : j.items()) {
      out << YAML::Key << k << YAML::Value;
      emit(out, v);
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit(out, v);
    out << YAML::EndSeq;
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_unsigned()) {
    out << j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    out << j.get<long long>();
  } else if (j.is_number_float()) {
    out << j.get<double>();
  } else {
    out << j.get<std::string>();
  }
}

}  // namespace

void RunConfig::validate() const {
  task.validate();
  model.validate();
  sft.validate();
  ppo.validate();
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (ratios.empty()) throw std::invalid_argument("ratios must not be empty");
  for (int c : ratios) {
    if (c < 1) throw std::invalid_argument("every ratio must be >= 1");
  }
  for (int c : ratios) distill_for(c).validate(model.vocab_size);
  if (train.steps < 0 || train.accuracy_window < 1 || train.checkpoint_every < 0 || train.store_top_k < 0) {
    throw std::invalid_argument("train schedule values out of range");
  }
  if (train.store_top_k > model.vocab_size) throw std::invalid_argument("train.store_top_k exceeds the vocabulary");
  eval.validate();
  if (output_dir.empty()) throw std::invalid_argument("output_dir must not be empty");
}

training::DistillConfig RunConfig::distill_for(int c) const {
  auto d = distill;
  d.ratio_c = c;
  return d;
}

std::filesystem::path RunConfig::output_path(const std::filesystem::path& root) const {
  const std::filesystem::path p(output_dir);
  return p.is_absolute() || root.empty() ? p : root / p;
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"base_seed", base_seed},
          {"output_dir", output_dir},
          {"jobs", jobs},
          {"task", task.to_json()},
          {"model", model.to_json()},
          {"sft", sft.to_json()},
          {"ppo", ppo.to_json()},
          {"distill", distill_schema(distill)},
          {"ratios", ratios},
          {"train", train_json(train)},
          {"eval", eval.to_json()}};
}

bool RunConfig::operator==(const RunConfig& o) const { return to_json() == o.to_json(); }

std::string RunConfig::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out.SetFloatPrecision(9);
  emit(out, to_json());
  return std::string(out.c_str()) + "\n";
}

RunConfig parse_run_config(const std::string& text, const std::string& file) {
  const Source src{file};
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(file, e.mark.line + 1, e.mark.column + 1, e.msg);
  }
  RunConfig cfg;
  if (!root || root.IsNull()) return cfg;

  auto schema = cfg.to_json();
  schema["task"]["preset"] = "toy";
  schema["ratios"] = nlohmann::json::array({0});
  const auto j = convert(root, schema, "config", src);

  // Section-level checks report the position of the section itself.
  auto section = [&](const char* key, auto&& apply) {
    if (!j.contains(key)) return;
    try {
      apply(j.at(key));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      src.fail(root[key].Mark(), std::string("invalid '") + key + "': " + e.what());
    }
  };
  section("seed", [&](const auto& v) { cfg.seed = v.template get<std::uint64_t>(); });
  section("base_seed", [&](const auto& v) { cfg.base_seed = v.template get<std::uint64_t>(); });
  section("output_dir", [&](const auto& v) { cfg.output_dir = v.template get<std::string>(); });
  section("jobs", [&](const auto& v) { cfg.jobs = v.template get<int>(); });
  section("task", [&](const auto& v) {
    auto base = task_preset(v.value("kind", std::string("stargraph")), v.value("preset", std::string("toy"))).to_json();
    auto patch = v;
    patch.erase("preset");
    base.merge_patch(patch);
    cfg.task = tasks::TaskConfig::from_json(base);
  });
  section("model", [&](const auto& v) {
    auto base = cfg.model.to_json();
    base.merge_patch(v);
    cfg.model = model::ModelConfig::from_json(base);
  });
  section("sft", [&](const auto& v) {
    cfg.sft = training::SftConfig::from_json(v);
    cfg.sft.validate();
  });
  section("ppo", [&](const auto& v) {
    auto base = cfg.ppo.to_json();
    base.merge_patch(v);
    cfg.ppo = training::PpoConfig::from_json(base);
    cfg.ppo.validate();
  });
  section("distill", [&](const auto& v) {
    auto base = cfg.distill.to_json();
    base.merge_patch(v);
    cfg.distill = training::DistillConfig::from_json(base);
  });
  section("ratios", [&](const auto& v) { cfg.ratios = v.template get<std::vector<int>>(); });
  section("train", [&](const auto& v) { cfg.train = train_from_json(v); });
  section("eval", [&](const auto& v) {
    auto base = cfg.eval.to_json();
    base.merge_patch(v);
    cfg.eval = eval::EvalProtocol::from_json(base);
  });
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    src.fail(root.Mark(), e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bcr::cli
