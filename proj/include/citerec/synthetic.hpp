#pragma once

// Seeded clustered corpus for tests, benchmarks and the acceptance run.
//
// Words belong to one of `clusters` vocabulary clusters (vector = cluster
// centroid + word-specific noise) or to a shared general pool. Each paper
// draws its title and most of its abstract from its own cluster. A query's
// local context surrounds the marker with words of the cited paper, other
// words of its cluster, general words and stopwords; the citing paper is an
// unrelated paper from the query's time period.

#include "citerec/corpus.hpp"
#include "citerec/textprep.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace citerec {

struct SyntheticConfig {
  std::size_t documents = 500;
  std::size_t clusters = 10;
  std::size_t queries = 1000;
  std::size_t dim = 64;
  std::size_t words_per_cluster = 300;
  std::size_t general_words = 150;
  std::size_t title_words = 4;
  std::size_t abstract_words = 15;
  /// Fraction of abstract words drawn from the paper's cluster.
  double abstract_cluster_share = 0.7;
  std::size_t context_window = 200;
  std::size_t context_cited_words = 10;
  std::size_t context_cluster_words = 0;
  std::size_t context_general_words = 6;
  std::size_t context_stopwords = 4;
  /// Norm of the word-specific part of a cluster word relative to its centroid.
  double word_noise = 2.0;
  /// Overall scale of the word vectors (centroid norm).
  double vector_scale = 3.0;
  /// Share of papers (and queries) in the validation and test periods.
  double val_share = 0.1;
  double test_share = 0.1;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<PaperRecord> papers;
  std::vector<ContextRecord> contexts;
  SplitResult splits;
  std::vector<std::string> words;
  nn::Matrix vectors;  // words.size() x dim
  std::vector<std::size_t> paper_cluster;

  [[nodiscard]] Vocabulary vocabulary() const { return Vocabulary(words, vectors); }
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg);

/// Writes papers.jsonl, contexts.jsonl, splits.json and embeddings.txt.
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace citerec
