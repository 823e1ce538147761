#include "bcr/model/vocab.hpp"

#include <algorithm>
#include <fstream>

namespace bcr::model {

namespace {
constexpr const char* kPad = "<|pad|>";
constexpr const char* kStop = "<|stop|>";
constexpr const char* kBeacon = "<|beacon|>";
constexpr const char* kAnswerOpen = "<answer>";
constexpr const char* kAnswerClose = "</answer>";
}  // namespace

void Vocabulary::add(std::string token) {
  if (ids_.count(token)) throw std::invalid_argument("Vocabulary: duplicate token " + token);
  ids_.emplace(token, size());
  tokens_.push_back(std::move(token));
}

void Vocabulary::finish() {
  auto find = [this](const char* t) {
    auto it = ids_.find(t);
    if (it == ids_.end()) throw std::invalid_argument(std::string("Vocabulary: missing reserved token ") + t);
    return it->second;
  };
  pad_ = find(kPad);
  stop_ = find(kStop);
  beacon_ = find(kBeacon);
  answer_open_ = find(kAnswerOpen);
  answer_close_ = find(kAnswerClose);
  keywords_.clear();
  for (const auto& t : tokens_) {
    if (t.size() > 1 && t != kPad && t != kStop && t != kBeacon) keywords_.push_back(t);
  }
  std::stable_sort(keywords_.begin(), keywords_.end(),
                   [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
}

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  v.add(kPad);
  v.add(kStop);
  v.add(kBeacon);
  v.add(kAnswerOpen);
  v.add(kAnswerClose);
  v.add("->");
  v.add("\n");
  for (char c = ' '; c <= '~'; ++c) v.add(std::string(1, c));
  v.finish();
  return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  const auto& table = j.at("tokens");
  std::vector<std::string> by_id(table.size());
  for (auto it = table.begin(); it != table.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(by_id.size()) || !by_id[static_cast<std::size_t>(id)].empty()) {
      throw std::invalid_argument("Vocabulary: ids must be dense and unique, bad id " + std::to_string(id));
    }
    by_id[static_cast<std::size_t>(id)] = it.key();
  }
  Vocabulary v;
  for (auto& t : by_id) v.add(std::move(t));
  v.finish();
  return v;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json table = nlohmann::json::object();
  for (int i = 0; i < size(); ++i) table[tokens_[static_cast<std::size_t>(i)]] = i;
  return {{"tokens", table}};
}

void Vocabulary::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write vocabulary " + file.string());
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read vocabulary " + file.string());
  return from_json(nlohmann::json::parse(in));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw TokenizeError("Vocabulary: unknown token '" + std::string(token) + "'");
  return it->second;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& kw : keywords_) {
      if (text.substr(i, kw.size()) == kw) {
        out.push_back(ids_.at(kw));
        i += kw.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    auto it = ids_.find(std::string(1, text[i]));
    if (it == ids_.end()) {
      throw TokenizeError("tokenize: character code " + std::to_string(static_cast<unsigned char>(text[i])) +
                          " at offset " + std::to_string(i) + " is not in the vocabulary");
    }
    out.push_back(it->second);
    ++i;
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

}  // namespace bcr::model
