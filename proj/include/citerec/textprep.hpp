#pragma once

#include "citerec/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace citerec {

using TokenId = std::uint32_t;

/// Lowercase (ASCII), split on Unicode whitespace, then peel leading and
/// trailing ASCII punctuation off each word as one-character tokens.
/// "Hello, world" -> ["hello", ",", "world"].
std::vector<std::string> tokenize(std::string_view text);

/// Frozen word-vector table. Row 0 is the all-zero UNK vector; word i of the
/// file lives at row i + 1.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, nn::Matrix vectors);

  [[nodiscard]] TokenId lookup(std::string_view token) const;
  [[nodiscard]] std::vector<TokenId> lookup(const std::vector<std::string>& tokens) const;
  [[nodiscard]] auto vector(TokenId id) const { return table_.row(static_cast<nn::Index>(id)); }
  [[nodiscard]] const nn::Matrix& table() const { return table_; }
  [[nodiscard]] const std::string& word(TokenId id) const;

  /// Number of real words (excludes UNK).
  [[nodiscard]] std::size_t size() const { return words_.size(); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(table_.cols()); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  nn::Matrix table_;  // (size + 1) x dim
};

/// Reads `token v1 ... vD` lines. Throws std::runtime_error naming the line
/// on wrong arity or unparsable numbers. Later duplicates of a token are
/// ignored.
Vocabulary load_embeddings(const std::filesystem::path& path, std::size_t dim);

/// Writes the table back in the same text format, shortest round-trip
/// decimal form.
void write_embeddings(const std::filesystem::path& path, const Vocabulary& vocab);

/// Sorted, de-duplicated token list used as a set.
using TokenSet = std::vector<std::string>;

TokenSet make_token_set(std::vector<std::string> tokens);

/// Content words of `text`: tokens minus punctuation, the citation marker,
/// and a small built-in English stopword list.
TokenSet content_token_set(std::string_view text);

bool is_stopword(std::string_view token);

/// |a n b| / |a u b|; 0 when both are empty.
double jaccard(const TokenSet& a, const TokenSet& b);

}  // namespace citerec
