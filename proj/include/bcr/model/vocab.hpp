#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace bcr::model {

class TokenizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Character-plus-keyword vocabulary. Keywords (answer tags, "->") get one id
/// each and win over single characters by greedy longest match; every other
/// printable ASCII character and '\n' is its own token.
class Vocabulary {
 public:
  /// The task alphabet: specials, keywords, printable ASCII, newline.
  static Vocabulary standard();

  static Vocabulary from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& file) const;
  static Vocabulary load(const std::filesystem::path& file);

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad() const { return pad_; }
  int stop() const { return stop_; }
  int beacon() const { return beacon_; }
  int answer_open() const { return answer_open_; }
  int answer_close() const { return answer_close_; }

  bool is_special(int id) const { return id == pad_ || id == stop_ || id == beacon_; }
  const std::string& token(int id) const;
  int id(std::string_view token) const;

  std::vector<int> tokenize(std::string_view text) const;
  /// Specials render as their bracketed names, e.g. "<|stop|>".
  std::string detokenize(std::span<const int> ids) const;

 private:
  void add(std::string token);
  void finish();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> keywords_;  // multi-character, longest first
  int pad_ = -1, stop_ = -1, beacon_ = -1, answer_open_ = -1, answer_close_ = -1;
};

}  // namespace bcr::model
