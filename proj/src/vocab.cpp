#include "divgen/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace divgen {

namespace {

const std::vector<std::string> kReserved = {"<start>", "<end>", "<unk>"};

}  // namespace

std::vector<std::string> split_words(const std::string& sentence) {
  std::istringstream in(sentence);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

Vocabulary::Vocabulary() : tokens_(kReserved) { rebuild_index(); }

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::set<std::string> unique;
  for (const std::string& w : words) {
    if (w.empty()) throw std::invalid_argument("vocabulary word must be nonempty");
    for (const std::string& r : kReserved) {
      if (w == r) {
        throw std::invalid_argument("reserved token in word list: " + w);
      }
    }
    unique.insert(w);
  }
  Vocabulary v;
  v.tokens_.insert(v.tokens_.end(), unique.begin(), unique.end());
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + tokens_[i]);
    }
  }
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("token id out of range");
  return tokens_[id];
}

std::optional<std::size_t> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenSequence Vocabulary::encode(const std::string& sentence) const {
  TokenSequence seq;
  for (const std::string& w : split_words(sentence)) {
    auto id = find(w);
    seq.ids.push_back(id ? *id : kUnk);
  }
  return seq;
}

std::string Vocabulary::decode(const TokenSequence& seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(seq.ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open vocabulary file for writing: " + path);
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved.size()) {
    throw std::runtime_error("vocabulary token list too short");
  }
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (tokens[i] != kReserved[i]) {
      throw std::runtime_error("vocabulary token list missing reserved tokens");
    }
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.rebuild_index();
  if (v.index_.size() != v.tokens_.size()) {
    throw std::runtime_error("vocabulary token list has duplicates");
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  try {
    return from_tokens(std::move(lines));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + ": " + path);
  }
}

}  // namespace divgen
