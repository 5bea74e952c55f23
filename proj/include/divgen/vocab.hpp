#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace divgen {

struct TokenSequence {
  std::vector<std::size_t> ids;

  bool operator==(const TokenSequence&) const = default;
};

// Token/index bijection with reserved sentinels at fixed low indices.
class Vocabulary {
 public:
  static constexpr std::size_t kStart = 0;
  static constexpr std::size_t kEnd = 1;
  static constexpr std::size_t kUnk = 2;

  Vocabulary();
  // Deduplicates, sorts, and appends after the reserved tokens.
  static Vocabulary from_words(const std::vector<std::string>& words);
  // Exact token list including the reserved prefix, in index order.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const;
  std::optional<std::size_t> find(const std::string& token) const;

  // Whitespace tokenization; unknown words map to <unk>.
  TokenSequence encode(const std::string& sentence) const;
  std::string decode(const TokenSequence& seq) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line, index = line number.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;

  void rebuild_index();
};

std::vector<std::string> split_words(const std::string& sentence);

}  // namespace divgen
