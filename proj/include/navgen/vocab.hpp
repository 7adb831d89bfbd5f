#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace navgen {

// Token <-> id map. Ids 0..3 are reserved for the special tokens.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kSpecials = 4;
  static const std::vector<std::string>& specials();

  Vocab();
  // Specials followed by `tokens` in order; duplicates and specials are skipped.
  explicit Vocab(const std::vector<std::string>& tokens);

  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Drops special tokens.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  // Throws Error unless the array starts with the special tokens.
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace navgen
