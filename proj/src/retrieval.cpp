#include "citerec/retrieval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace citerec {

std::size_t CandidateList::rank_of(std::string_view id) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].paper_id == id) return i + 1;
  }
  return 0;
}

std::vector<std::string> CandidateList::ids() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& c : items) out.push_back(c.paper_id);
  return out;
}

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.paper_id < b.paper_id;
}

void sort_candidates(std::vector<Candidate>& items) { std::sort(items.begin(), items.end(), ranks_before); }

namespace {

struct Scored {
  double score;
  std::uint32_t row;
};

template <class T>
CandidateList select_rows(const std::vector<std::string>& ids, std::span<const T> scores, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: K must be at least 1");
  if (ids.empty()) throw std::invalid_argument("top_k: index is empty");
  const std::size_t n = ids.size();
  CandidateList out;
  out.clipped = k > n;
  const std::size_t keep = std::min(k, n);
  std::vector<Scored> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = {static_cast<double>(scores[i]), static_cast<std::uint32_t>(i)};
  auto before = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids[a.row] < ids[b.row];
  };
  const auto mid = order.begin() + static_cast<std::ptrdiff_t>(keep);
  if (keep < n) std::nth_element(order.begin(), mid, order.end(), before);
  std::sort(order.begin(), mid, before);
  out.items.resize(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    auto& c = out.items[i];
    c.paper_id = ids[order[i].row];
    c.score = c.prefetch_score = order[i].score;
  }
  return out;
}

// LSD radix sort, one byte per pass; passes where every key shares the byte
// are skipped.
void radix_sort(std::vector<std::uint64_t>& keys, std::size_t count) {
  std::vector<std::uint64_t> buffer(count);
  std::uint64_t* src = keys.data();
  std::uint64_t* dst = buffer.data();
  for (int shift = 0; shift < 64; shift += 8) {
    std::array<std::size_t, 257> start{};
    for (std::size_t i = 0; i < count; ++i) ++start[((src[i] >> shift) & 0xffu) + 1];
    if (std::find(start.begin() + 1, start.end(), count) != start.end()) continue;
    for (std::size_t b = 1; b < start.size(); ++b) start[b] += start[b - 1];
    for (std::size_t i = 0; i < count; ++i) dst[start[(src[i] >> shift) & 0xffu]++] = src[i];
    std::swap(src, dst);
  }
  if (src != keys.data()) std::copy(src, src + count, keys.data());
}

}  // namespace

CandidateList select_top_k(const std::vector<std::string>& ids, std::span<const double> scores,
                           std::size_t k) {
  return select_rows(ids, scores, k);
}

// ---------------------------------------------------------------------------

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, std::vector<float> rows, std::size_t dim,
                               std::string checkpoint_tag)
    : ids_(std::move(ids)), rows_(std::move(rows)), dim_(dim), tag_(std::move(checkpoint_tag)) {
  if (dim_ == 0) throw std::invalid_argument("EmbeddingIndex: dimension must be positive");
  if (rows_.size() != ids_.size() * dim_) {
    throw std::invalid_argument("EmbeddingIndex: matrix has " + std::to_string(rows_.size()) +
                                " values, expected " + std::to_string(ids_.size() * dim_));
  }
  by_id_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!by_id_.emplace(ids_[i], i).second) {
      throw std::invalid_argument("EmbeddingIndex: duplicate id \"" + ids_[i] + "\"");
    }
    double sq = 0.0;
    for (float v : row(i)) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) {
      throw std::invalid_argument("EmbeddingIndex: row for \"" + ids_[i] + "\" is not unit-norm");
    }
  }
  rows_by_id_.resize(ids_.size());
  std::iota(rows_by_id_.begin(), rows_by_id_.end(), 0u);
  std::sort(rows_by_id_.begin(), rows_by_id_.end(), [&](auto a, auto b) { return ids_[a] < ids_[b]; });
  id_rank_.resize(ids_.size());
  for (std::size_t r = 0; r < rows_by_id_.size(); ++r) id_rank_[rows_by_id_[r]] = static_cast<std::uint32_t>(r);
}

EmbeddingIndex EmbeddingIndex::build(const Corpus& corpus, const std::vector<DocEmbedding>& embeddings,
                                     std::string checkpoint_tag) {
  if (embeddings.size() != corpus.size()) {
    throw std::invalid_argument("EmbeddingIndex::build: embedding count != corpus size");
  }
  if (embeddings.empty()) throw std::invalid_argument("EmbeddingIndex::build: empty corpus");
  const std::size_t dim = embeddings.front().vector.size();
  std::vector<std::string> ids;
  std::vector<float> rows;
  ids.reserve(embeddings.size());
  rows.reserve(embeddings.size() * dim);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& e = embeddings[i];
    if (e.vector.size() != dim) {
      throw std::invalid_argument("EmbeddingIndex::build: paper " + corpus.papers()[i].paper_id +
                                  " has no embedding of dimension " + std::to_string(dim));
    }
    ids.push_back(corpus.papers()[i].paper_id);
    for (double v : e.vector) rows.push_back(static_cast<float>(v));
  }
  return EmbeddingIndex(std::move(ids), std::move(rows), dim, std::move(checkpoint_tag));
}

std::optional<std::size_t> EmbeddingIndex::row_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<float> EmbeddingIndex::score_all(std::span<const double> query) const {
  std::vector<float> scores(ids_.size());
  score_into(query, scores);
  return scores;
}

void EmbeddingIndex::score_into(std::span<const double> query, std::span<float> out) const {
  if (out.size() != ids_.size()) throw std::invalid_argument("EmbeddingIndex: output size differs from index size");
  if (query.size() != dim_) {
    throw std::invalid_argument("EmbeddingIndex: query dimension " + std::to_string(query.size()) +
                                " != index dimension " + std::to_string(dim_));
  }
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajorF> m(rows_.data(), static_cast<Eigen::Index>(ids_.size()),
                                      static_cast<Eigen::Index>(dim_));
  Eigen::VectorXf q(static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < dim_; ++k) q(static_cast<Eigen::Index>(k)) = static_cast<float>(query[k]);
  Eigen::Map<Eigen::VectorXf>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() = m * q;
}

namespace {

constexpr char kIndexMagic[8] = {'C', 'R', 'I', 'N', 'D', 'E', 'X', '1'};

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

template <class T>
T get_le(const std::string& blob, std::size_t& at) {
  if (at + sizeof(T) > blob.size()) throw std::runtime_error("index file truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(blob[at + i])) << (8 * i);
  }
  at += sizeof(T);
  return v;
}

}  // namespace

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  std::string blob(kIndexMagic, kIndexMagic + 8);
  put_le<std::uint64_t>(blob, ids_.size());
  put_le<std::uint64_t>(blob, dim_);
  put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(tag_.size()));
  blob += tag_;
  for (float v : rows_) put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(v));
  for (const auto& id : ids_) {
    put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(id.size()));
    blob += id;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open index file " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 8 || std::memcmp(blob.data(), kIndexMagic, 8) != 0) {
    throw std::runtime_error(path.string() + ": not an index file (bad magic)");
  }
  std::size_t at = 8;
  const auto n = get_le<std::uint64_t>(blob, at);
  const auto d = get_le<std::uint64_t>(blob, at);
  const auto tag_len = get_le<std::uint32_t>(blob, at);
  if (at + tag_len > blob.size()) throw std::runtime_error(path.string() + ": truncated header");
  std::string tag = blob.substr(at, tag_len);
  at += tag_len;
  std::vector<float> rows(n * d);
  for (auto& v : rows) v = std::bit_cast<float>(get_le<std::uint32_t>(blob, at));
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    const auto len = get_le<std::uint32_t>(blob, at);
    if (at + len > blob.size()) throw std::runtime_error(path.string() + ": truncated id table");
    id = blob.substr(at, len);
    at += len;
  }
  return EmbeddingIndex(std::move(ids), std::move(rows), d, std::move(tag));
}

CandidateList top_k(const EmbeddingIndex& index, const DocEmbedding& query, std::size_t k) {
  if (index.size() == 0) throw std::invalid_argument("top_k: index is empty");
  if (k == 0) throw std::invalid_argument("top_k: K must be at least 1");
  // Reused across calls; large fresh buffers cost page faults on every query.
  thread_local std::vector<float> scores;
  thread_local std::vector<std::uint64_t> keys;
  const std::size_t n = index.size();
  scores.resize(n);
  keys.resize(n);
  index.score_into(query.vector, scores);
  const std::size_t keep = std::min(k, n);
  // One integer per row: descending score in the high word, id rank in the
  // low word, so ascending key order is (score desc, id asc).
  const auto& rank = index.id_rank();
  for (std::size_t i = 0; i < n; ++i) {
    const float f = scores[i] == 0.0f ? 0.0f : scores[i];
    const auto u = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t ascending = (u & 0x80000000u) != 0 ? ~u : (u | 0x80000000u);
    keys[i] = (static_cast<std::uint64_t>(~ascending) << 32) | rank[i];
  }
  const auto mid = keys.begin() + static_cast<std::ptrdiff_t>(keep);
  if (keep < n) std::nth_element(keys.begin(), mid, keys.end());
  if (keep > 256) {
    radix_sort(keys, keep);
  } else {
    std::sort(keys.begin(), mid);
  }
  CandidateList out;
  out.clipped = k > n;
  out.items.resize(keep);
  const auto& rows = index.rows_by_id();
  for (std::size_t i = 0; i < keep; ++i) {
    const auto row = rows[keys[i] & 0xffffffffu];
    auto& c = out.items[i];
    c.paper_id = index.ids()[row];
    c.score = c.prefetch_score = scores[row];
  }
  return out;
}

std::shared_ptr<const EmbeddingIndex> rebuild(IndexHandle& handle, const HAttenModel& model,
                                              const Corpus& corpus, std::string checkpoint_tag,
                                              unsigned threads) {
  auto fresh = std::make_shared<const EmbeddingIndex>(
      EmbeddingIndex::build(corpus, encode_corpus(model, corpus, 32, threads), std::move(checkpoint_tag)));
  handle.swap(fresh);
  return fresh;
}

// ---------------------------------------------------------------------------

BM25Index::BM25Index(std::vector<std::string> ids, const std::vector<std::vector<std::string>>& docs,
                     double k1, double b)
    : ids_(std::move(ids)), k1_(k1), b_(b) {
  if (ids_.size() != docs.size()) throw std::invalid_argument("BM25Index: ids and docs differ in length");
  doc_len_.reserve(docs.size());
  std::uint64_t total = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (!by_id_.emplace(ids_[d], d).second) {
      throw std::invalid_argument("BM25Index: duplicate id \"" + ids_[d] + "\"");
    }
    std::map<std::string_view, std::uint32_t> counts;
    for (const auto& t : docs[d]) ++counts[t];
    for (const auto& [term, tf] : counts) {
      postings_[std::string(term)].push_back(Posting{static_cast<std::uint32_t>(d), tf});
    }
    doc_len_.push_back(static_cast<std::uint32_t>(docs[d].size()));
    total += docs[d].size();
  }
  avgdl_ = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
}

BM25Index BM25Index::build(const Corpus& corpus, double k1, double b) {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> docs;
  for (const auto& p : corpus.papers()) {
    ids.push_back(p.paper_id);
    auto tokens = tokenize(p.title);
    auto more = tokenize(p.abstract);
    tokens.insert(tokens.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    docs.push_back(std::move(tokens));
  }
  return BM25Index(std::move(ids), docs, k1, b);
}

const std::vector<Posting>* BM25Index::postings(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? nullptr : &it->second;
}

std::size_t BM25Index::document_frequency(std::string_view term) const {
  const auto* p = postings(term);
  return p == nullptr ? 0 : p->size();
}

std::uint32_t BM25Index::term_frequency(std::string_view term, std::size_t doc) const {
  const auto* p = postings(term);
  if (p == nullptr) return 0;
  auto it = std::lower_bound(p->begin(), p->end(), doc,
                             [](const Posting& post, std::size_t d) { return post.doc < d; });
  return (it != p->end() && it->doc == doc) ? it->tf : 0;
}

double BM25Index::idf(std::string_view term) const {
  const double n = static_cast<double>(ids_.size());
  const double nt = static_cast<double>(document_frequency(term));
  return std::log((n - nt + 0.5) / (nt + 0.5) + 1.0);
}

std::optional<std::size_t> BM25Index::doc_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

namespace {

double bm25_term(const BM25Index& index, double idf, std::uint32_t tf, std::size_t doc) {
  if (tf == 0) return 0.0;
  const double k1 = index.k1();
  const double b = index.b();
  const double norm = 1.0 - b + b * static_cast<double>(index.doc_length(doc)) / index.average_length();
  const double f = static_cast<double>(tf);
  return idf * f * (k1 + 1.0) / (f + k1 * norm);
}

}  // namespace

double bm25_score(const BM25Index& index, const std::vector<std::string>& query_tokens, std::size_t doc) {
  if (doc >= index.size()) throw std::out_of_range("bm25_score: document index out of range");
  double score = 0.0;
  for (const auto& t : query_tokens) score += bm25_term(index, index.idf(t), index.term_frequency(t, doc), doc);
  return score;
}

CandidateList bm25_top_k(const BM25Index& index, const std::vector<std::string>& query_tokens,
                         std::size_t k) {
  std::vector<double> scores(index.size(), 0.0);
  // Group repeated query terms so each posting list is walked once.
  std::map<std::string_view, std::size_t> qtf;
  for (const auto& t : query_tokens) ++qtf[t];
  bool matched = false;
  for (const auto& [term, mult] : qtf) {
    const auto* plist = index.postings(term);
    if (plist == nullptr) continue;
    const double idf = index.idf(term);
    for (const auto& post : *plist) {
      scores[post.doc] += static_cast<double>(mult) * bm25_term(index, idf, post.tf, post.doc);
      matched = true;
    }
  }
  CandidateList out = select_top_k(index.ids(), scores, k);
  out.degenerate = !matched;
  return out;
}

// ---------------------------------------------------------------------------

DocEmbedding mean_embedding_baseline(std::string_view text, const Vocabulary& vocab) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.dim()));
  std::size_t used = 0;
  for (const auto& t : tokenize(text)) {
    const TokenId id = vocab.lookup(t);
    if (id == Vocabulary::kUnk) continue;
    acc += vocab.vector(id).transpose();
    ++used;
  }
  if (used == 0) throw std::invalid_argument("mean_embedding_baseline: no token is in the vocabulary");
  acc /= static_cast<double>(used);
  const double norm = acc.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("mean_embedding_baseline: mean vector is zero");
  acc /= norm;
  return DocEmbedding{std::vector<double>(acc.data(), acc.data() + acc.size()), true};
}

EmbeddingIndex build_mean_embedding_index(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<DocEmbedding> rows;
  rows.reserve(corpus.size());
  const double flat = 1.0 / std::sqrt(static_cast<double>(vocab.dim()));
  for (const auto& p : corpus.papers()) {
    try {
      rows.push_back(mean_embedding_baseline(p.title + " " + p.abstract, vocab));
    } catch (const std::invalid_argument&) {
      rows.push_back(DocEmbedding{std::vector<double>(vocab.dim(), flat), true});
    }
  }
  return EmbeddingIndex::build(corpus, rows, "mean-embedding");
}

std::string query_text(const Query& q) {
  return q.local_context + " " + q.citing_title + " " + q.citing_abstract;
}

CandidateList HAttenPrefetcher::prefetch(const Query& q, std::size_t k) const {
  const auto index = index_.get();
  if (!index) throw std::logic_error("HAttenPrefetcher: no index loaded");
  return top_k(*index, model_.embed_query(model_.make_query(q)), k);
}

CandidateList BM25Prefetcher::prefetch(const Query& q, std::size_t k) const {
  return bm25_top_k(index_, tokenize(query_text(q)), k);
}

CandidateList MeanEmbeddingPrefetcher::prefetch(const Query& q, std::size_t k) const {
  return top_k(index_, mean_embedding_baseline(query_text(q), vocab_), k);
}

CandidateList FixedEmbeddingPrefetcher::prefetch(const Query& q, std::size_t k) const {
  auto it = queries_.find(q.context_id);
  if (it == queries_.end()) throw std::out_of_range("no fixed embedding for query " + q.context_id);
  return top_k(index_, it->second, k);
}

}  // namespace citerec
