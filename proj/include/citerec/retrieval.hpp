#pragma once

#include "citerec/corpus.hpp"
#include "citerec/hatten.hpp"
#include "citerec/textprep.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace citerec {

struct Candidate {
  std::string paper_id;
  double score = 0.0;
  /// Score the first stage gave this candidate; NaN when unknown.
  double prefetch_score = std::numeric_limits<double>::quiet_NaN();
};

/// Ranked candidates: score descending, ties by ascending paper_id.
struct CandidateList {
  std::vector<Candidate> items;
  /// More candidates were requested than the collection holds.
  bool clipped = false;
  /// Every score is zero (e.g. an empty BM25 query); order is id order only.
  bool degenerate = false;

  [[nodiscard]] std::size_t size() const { return items.size(); }
  [[nodiscard]] bool empty() const { return items.empty(); }
  /// 1-based rank of `id`, or 0 when absent.
  [[nodiscard]] std::size_t rank_of(std::string_view id) const;
  [[nodiscard]] std::vector<std::string> ids() const;
};

/// Strict weak order used for every ranking in the library.
bool ranks_before(const Candidate& a, const Candidate& b);
void sort_candidates(std::vector<Candidate>& items);

/// Flat N x d float matrix of unit-norm document embeddings.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  /// Throws std::invalid_argument when sizes disagree, ids repeat, or a row
  /// is not unit-norm (tolerance 1e-4).
  EmbeddingIndex(std::vector<std::string> ids, std::vector<float> rows, std::size_t dim,
                 std::string checkpoint_tag);

  /// Rows follow corpus paper order.
  static EmbeddingIndex build(const Corpus& corpus, const std::vector<DocEmbedding>& embeddings,
                              std::string checkpoint_tag);

  [[nodiscard]] std::size_t size() const { return ids_.size(); }
  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
  [[nodiscard]] const std::string& checkpoint_tag() const { return tag_; }
  [[nodiscard]] const std::vector<float>& data() const { return rows_; }
  [[nodiscard]] std::span<const float> row(std::size_t i) const {
    return {rows_.data() + i * dim_, dim_};
  }
  [[nodiscard]] std::optional<std::size_t> row_of(std::string_view id) const;
  /// Position of each row's id in ascending id order, and its inverse.
  [[nodiscard]] const std::vector<std::uint32_t>& id_rank() const { return id_rank_; }
  [[nodiscard]] const std::vector<std::uint32_t>& rows_by_id() const { return rows_by_id_; }

  /// Dot product of the query with every row (all N scored).
  [[nodiscard]] std::vector<float> score_all(std::span<const double> query) const;
  void score_into(std::span<const double> query, std::span<float> out) const;

  /// Byte layout in docs/file_formats.md.
  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  std::vector<float> rows_;
  std::size_t dim_ = 0;
  std::string tag_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::uint32_t> id_rank_;
  std::vector<std::uint32_t> rows_by_id_;
};

/// Exact top-K by cosine (dot product of unit vectors). K > N returns all N
/// with `clipped` set. Throws std::invalid_argument for K == 0, an empty
/// index, or a dimension mismatch.
CandidateList top_k(const EmbeddingIndex& index, const DocEmbedding& query, std::size_t k);

/// Rank the first `k` of `n` scored rows. Shared by every prefetcher.
CandidateList select_top_k(const std::vector<std::string>& ids, std::span<const double> scores,
                           std::size_t k);

/// Shared, atomically replaceable index. Readers hold a snapshot for as long
/// as they need it; swap() never exposes a partially built index.
class IndexHandle {
 public:
  IndexHandle() = default;
  explicit IndexHandle(std::shared_ptr<const EmbeddingIndex> index) : index_(std::move(index)) {}

  [[nodiscard]] std::shared_ptr<const EmbeddingIndex> get() const {
    std::lock_guard lock(mu_);
    return index_;
  }
  void swap(std::shared_ptr<const EmbeddingIndex> next) {
    std::lock_guard lock(mu_);
    index_.swap(next);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const EmbeddingIndex> index_;
};

/// Re-encode the corpus with `model`, build a fresh index off to the side,
/// then swap it into `handle`. Returns the new index.
std::shared_ptr<const EmbeddingIndex> rebuild(IndexHandle& handle, const HAttenModel& model,
                                              const Corpus& corpus, std::string checkpoint_tag,
                                              unsigned threads = 1);

// ---------------------------------------------------------------------------
// Okapi BM25.

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
};

class BM25Index {
 public:
  static constexpr double kDefaultK1 = 1.2;
  static constexpr double kDefaultB = 0.75;

  BM25Index() = default;
  /// Each document is a token list; ids align with docs.
  BM25Index(std::vector<std::string> ids, const std::vector<std::vector<std::string>>& docs,
            double k1 = kDefaultK1, double b = kDefaultB);
  /// Indexes title + abstract of every paper, tokenized with tokenize().
  static BM25Index build(const Corpus& corpus, double k1 = kDefaultK1, double b = kDefaultB);

  [[nodiscard]] std::size_t size() const { return ids_.size(); }
  [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
  [[nodiscard]] double k1() const { return k1_; }
  [[nodiscard]] double b() const { return b_; }
  [[nodiscard]] double average_length() const { return avgdl_; }
  [[nodiscard]] std::uint32_t doc_length(std::size_t doc) const { return doc_len_[doc]; }
  [[nodiscard]] std::size_t document_frequency(std::string_view term) const;
  [[nodiscard]] std::uint32_t term_frequency(std::string_view term, std::size_t doc) const;
  /// ln((N - n_t + 0.5) / (n_t + 0.5) + 1)
  [[nodiscard]] double idf(std::string_view term) const;
  [[nodiscard]] const std::vector<Posting>* postings(std::string_view term) const;
  [[nodiscard]] std::optional<std::size_t> doc_of(std::string_view id) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::uint32_t> doc_len_;
  double avgdl_ = 0.0;
  double k1_ = kDefaultK1;
  double b_ = kDefaultB;
};

/// Sum over query tokens (with multiplicity) of
/// idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avgdl)).
double bm25_score(const BM25Index& index, const std::vector<std::string>& query_tokens, std::size_t doc);

/// Scores every document and keeps the top K. An empty query (or one
/// matching nothing) returns K zero-scored documents in id order with
/// `degenerate` set.
CandidateList bm25_top_k(const BM25Index& index, const std::vector<std::string>& query_tokens,
                         std::size_t k);

// ---------------------------------------------------------------------------
// Word-vector averaging baseline.

/// Normalized mean of the vectors of the in-vocabulary tokens of `text`.
/// Throws std::invalid_argument when no token is in the vocabulary.
DocEmbedding mean_embedding_baseline(std::string_view text, const Vocabulary& vocab);

/// Index of mean embeddings over title + abstract. Papers with no
/// in-vocabulary token get the constant vector 1/sqrt(D).
EmbeddingIndex build_mean_embedding_index(const Corpus& corpus, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// First-stage interface used by training and evaluation.

class Prefetcher {
 public:
  virtual ~Prefetcher() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual CandidateList prefetch(const Query& q, std::size_t k) const = 0;
};

/// Concatenated query text used by the lexical and averaging baselines.
std::string query_text(const Query& q);

class HAttenPrefetcher final : public Prefetcher {
 public:
  HAttenPrefetcher(const HAttenModel& model, const IndexHandle& index) : model_(model), index_(index) {}
  [[nodiscard]] std::string name() const override { return "HAtten"; }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override;

 private:
  const HAttenModel& model_;
  const IndexHandle& index_;
};

class BM25Prefetcher final : public Prefetcher {
 public:
  explicit BM25Prefetcher(const BM25Index& index) : index_(index) {}
  [[nodiscard]] std::string name() const override { return "BM25"; }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override;

 private:
  const BM25Index& index_;
};

class MeanEmbeddingPrefetcher final : public Prefetcher {
 public:
  MeanEmbeddingPrefetcher(const Vocabulary& vocab, const EmbeddingIndex& index)
      : vocab_(vocab), index_(index) {}
  [[nodiscard]] std::string name() const override { return "MeanEmbedding"; }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override;

 private:
  const Vocabulary& vocab_;
  const EmbeddingIndex& index_;
};

/// Wraps a fixed embedding per query (keyed by context id); used for
/// oracle and random-embedding fixtures.
class FixedEmbeddingPrefetcher final : public Prefetcher {
 public:
  FixedEmbeddingPrefetcher(std::string name, const EmbeddingIndex& index,
                           std::unordered_map<std::string, DocEmbedding> query_embeddings)
      : name_(std::move(name)), index_(index), queries_(std::move(query_embeddings)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override;

 private:
  std::string name_;
  const EmbeddingIndex& index_;
  std::unordered_map<std::string, DocEmbedding> queries_;
};

}  // namespace citerec
