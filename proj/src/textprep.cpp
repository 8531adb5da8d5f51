#include "citerec/textprep.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace citerec {

namespace {

bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

/// Byte length of the Unicode whitespace sequence starting at s[i], or 0.
std::size_t whitespace_length(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 == ' ' || (b0 >= 0x09 && b0 <= 0x0D)) return 1;
  if (b0 < 0x80) return 0;
  auto at = [&](std::size_t k) -> unsigned {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u;
  };
  if (b0 == 0xC2 && (at(1) == 0x85 || at(1) == 0xA0)) return 2;  // NEL, NBSP
  if (b0 == 0xE1 && at(1) == 0x9A && at(2) == 0x80) return 3;    // U+1680
  if (b0 == 0xE2 && at(1) == 0x80) {
    const unsigned b2 = at(2);
    if ((b2 >= 0x80 && b2 <= 0x8A) || b2 == 0xA8 || b2 == 0xA9 || b2 == 0xAF) return 3;
  }
  if (b0 == 0xE2 && at(1) == 0x81 && at(2) == 0x9F) return 3;  // U+205F
  if (b0 == 0xE3 && at(1) == 0x80 && at(2) == 0x80) return 3;  // U+3000
  return 0;
}

void emit_word(std::string_view word, std::vector<std::string>& out) {
  std::size_t lo = 0, hi = word.size();
  while (lo < hi && is_ascii_punct(word[lo])) ++lo;
  if (lo == hi) {
    for (char c : word) out.emplace_back(1, c);
    return;
  }
  while (hi > lo && is_ascii_punct(word[hi - 1])) --hi;
  for (std::size_t i = 0; i < lo; ++i) out.emplace_back(1, word[i]);
  std::string core(word.substr(lo, hi - lo));
  for (char& c : core) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  out.push_back(std::move(core));
  for (std::size_t i = hi; i < word.size(); ++i) out.emplace_back(1, word[i]);
}

constexpr std::array<std::string_view, 64> kStopwords = {
    "a",     "about", "all",   "also",  "an",    "and",   "are",   "as",    "at",   "be",
    "been",  "but",   "by",    "can",   "could", "do",    "does",  "for",   "from", "had",
    "has",   "have",  "he",    "her",   "his",   "how",   "i",     "if",    "in",   "into",
    "is",    "it",    "its",   "may",   "more",  "no",    "not",   "of",    "on",   "or",
    "our",   "she",   "so",    "such",  "than",  "that",  "the",   "their", "them", "then",
    "there", "these", "they",  "this",  "to",    "was",   "we",    "were",  "what", "which",
    "while", "who",   "will",  "with"};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  std::size_t word_start = std::string_view::npos;
  while (i < text.size()) {
    const std::size_t ws = whitespace_length(text, i);
    if (ws > 0) {
      if (word_start != std::string_view::npos) {
        emit_word(text.substr(word_start, i - word_start), out);
        word_start = std::string_view::npos;
      }
      i += ws;
    } else {
      if (word_start == std::string_view::npos) word_start = i;
      ++i;
    }
  }
  if (word_start != std::string_view::npos) emit_word(text.substr(word_start), out);
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words, nn::Matrix vectors)
    : words_(std::move(words)) {
  if (static_cast<std::size_t>(vectors.rows()) != words_.size()) {
    throw std::invalid_argument("Vocabulary: word count does not match vector rows");
  }
  table_ = nn::Matrix::Zero(vectors.rows() + 1, vectors.cols());
  table_.bottomRows(vectors.rows()) = vectors;
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<TokenId>(i + 1)).second) {
      throw std::invalid_argument("Vocabulary: duplicate word \"" + words_[i] + "\"");
    }
  }
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::lookup(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(lookup(t));
  return ids;
}

const std::string& Vocabulary::word(TokenId id) const {
  static const std::string unk = "<unk>";
  if (id == kUnk || id > words_.size()) return unk;
  return words_[id - 1];
}

Vocabulary load_embeddings(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  std::vector<std::string> words;
  std::vector<double> values;
  std::unordered_map<std::string, bool> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto b = rest.find_first_not_of(" \t");
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      const auto e = rest.find_first_of(" \t");
      fields.push_back(rest.substr(0, e));
      rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
    }
    if (fields.size() != dim + 1) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(dim) + " values, found " +
                               std::to_string(fields.size() - 1));
    }
    std::string word(fields[0]);
    if (!seen.emplace(word, true).second) continue;
    for (std::size_t k = 1; k <= dim; ++k) {
      double v = 0.0;
      const auto f = fields[k];
      auto r = std::from_chars(f.data(), f.data() + f.size(), v);
      if (r.ec != std::errc{} || r.ptr != f.data() + f.size()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": cannot parse value \"" + std::string(f) + "\"");
      }
      values.push_back(v);
    }
    words.push_back(std::move(word));
  }
  nn::Matrix table(static_cast<nn::Index>(words.size()), static_cast<nn::Index>(dim));
  std::copy(values.begin(), values.end(), table.data());
  return Vocabulary(std::move(words), std::move(table));
}

void write_embeddings(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto id = static_cast<TokenId>(i + 1);
    out += vocab.word(id);
    const auto row = vocab.vector(id);
    for (nn::Index k = 0; k < row.size(); ++k) {
      auto r = std::to_chars(buf, buf + sizeof buf, row(k));
      out += ' ';
      out.append(buf, r.ptr);
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << out;
}

TokenSet make_token_set(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

bool is_stopword(std::string_view token) {
  return std::binary_search(kStopwords.begin(), kStopwords.end(), token);
}

TokenSet content_token_set(std::string_view text) {
  auto tokens = tokenize(text);
  std::erase_if(tokens, [](const std::string& t) {
    return (t.size() == 1 && is_ascii_punct(t[0])) || t == "cit" || is_stopword(t);
  });
  return make_token_set(std::move(tokens));
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace citerec
