#pragma once

// Second stage: a cross-encoder reads "[CLS] A [SEP] B" where A is the
// citing title, citing abstract and local context and B is the candidate's
// title and abstract, and maps the final [CLS] vector through one linear
// layer and a sigmoid to a relevance score in (0, 1).

#include "citerec/autodiff.hpp"
#include "citerec/corpus.hpp"
#include "citerec/layers.hpp"
#include "citerec/retrieval.hpp"
#include "citerec/textprep.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace citerec {

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

enum class Segment : std::uint8_t { A = 0, B = 1 };

struct RerankInput {
  std::vector<std::string> tokens;
  std::vector<Segment> segments;
};

/// Build the pair sequence. When it exceeds `max_tokens`, tokens are cut
/// from the tail of, in order: candidate abstract, citing abstract,
/// candidate title, citing title, local context, until it fits.
RerankInput assemble_input(const Query& q, const PaperRecord& candidate, std::size_t max_tokens = 256);

struct CrossEncoderConfig {
  int model_dim = 64;
  int heads = 4;
  int ff_dim = 128;
  int layers = 2;
  int max_rerank_tokens = 256;
  int embedding_dim = 200;
  double layer_norm_eps = 1e-5;
  double dropout = 0.0;  // only 0 is supported
  /// Add a learned vector to word tokens that also occur in the other segment.
  bool match_embedding = true;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static CrossEncoderConfig from_json(const nlohmann::json& j);
};

/// Small BERT-style pair encoder. Word tokens enter as frozen vocabulary
/// vectors through a trainable projection; [CLS] and [SEP] have their own
/// learned vectors. Segment, learned position and (optionally) exact-match
/// embeddings are added, then a layer norm and `layers` transformer layers.
class CrossEncoder {
 public:
  CrossEncoder(CrossEncoderConfig cfg, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed);

  [[nodiscard]] const CrossEncoderConfig& config() const { return cfg_; }
  [[nodiscard]] const Vocabulary& vocabulary() const { return *vocab_; }

  /// 1x1 pre-sigmoid logit.
  [[nodiscard]] nn::Var logit(nn::Tape& tape, const RerankInput& input) const;
  /// 1x1 relevance score.
  [[nodiscard]] nn::Var forward(nn::Tape& tape, const RerankInput& input) const;
  [[nodiscard]] double score(const RerankInput& input) const;

  /// Sets the output layer to zero so every score is exactly 0.5.
  void zero_head();

  [[nodiscard]] std::vector<nn::Parameter*> parameters();

  void save(const std::filesystem::path& path, nlohmann::json extra_meta = nlohmann::json::object()) const;
  static CrossEncoder from_checkpoint(const std::filesystem::path& path,
                                      std::shared_ptr<const Vocabulary> vocab);

  nn::Linear token_projection;
  nn::Parameter special_embeddings;   // 2 x d: [CLS], [SEP]
  nn::Parameter segment_embeddings;   // 2 x d: A, B
  nn::Parameter position_embeddings;  // max_rerank_tokens x d
  nn::Parameter embed_norm_gain, embed_norm_bias;
  nn::Parameter match_embeddings;     // 2 x d: no match, match; empty when disabled
  std::vector<nn::TransformerLayer> layers;
  nn::Linear head;

 private:
  CrossEncoderConfig cfg_;
  std::shared_ptr<const Vocabulary> vocab_;
};

// ---------------------------------------------------------------------------

/// Pluggable relevance model. Implementations must be pure: for fixed
/// weights the same pair always gets the same score.
class Scorer {
 public:
  virtual ~Scorer() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual double score(const Query& q, const PaperRecord& candidate) const = 0;
};

/// 1 for the cited paper, 0 otherwise.
class OracleScorer final : public Scorer {
 public:
  [[nodiscard]] std::string name() const override { return "oracle"; }
  [[nodiscard]] double score(const Query& q, const PaperRecord& c) const override {
    return c.paper_id == q.cited_id ? 1.0 : 0.0;
  }
};

class ConstantScorer final : public Scorer {
 public:
  explicit ConstantScorer(double value = 0.5) : value_(value) {}
  [[nodiscard]] std::string name() const override { return "constant"; }
  [[nodiscard]] double score(const Query&, const PaperRecord&) const override { return value_; }

 private:
  double value_;
};

class CrossEncoderScorer final : public Scorer {
 public:
  explicit CrossEncoderScorer(const CrossEncoder& model) : model_(model) {}
  [[nodiscard]] std::string name() const override { return "cross-encoder"; }
  [[nodiscard]] double score(const Query& q, const PaperRecord& c) const override {
    return model_.score(assemble_input(q, c, static_cast<std::size_t>(model_.config().max_rerank_tokens)));
  }

 private:
  const CrossEncoder& model_;
};

/// Out-of-process scorer. Runs `command` through /bin/sh and exchanges one
/// JSON line per pair over its stdin/stdout:
///   -> {"query": {"context_id", "local_context", "citing_title", "citing_abstract"},
///       "candidate": {"paper_id", "title", "abstract"}}
///   <- {"score": <number in [0, 1]>}
/// Calls are serialized.
class ExternalScorer final : public Scorer {
 public:
  explicit ExternalScorer(std::string command);
  ~ExternalScorer() override;
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  [[nodiscard]] std::string name() const override { return "external"; }
  [[nodiscard]] double score(const Query& q, const PaperRecord& c) const override;

  static std::string request_line(const Query& q, const PaperRecord& c);
  static double parse_response(std::string_view line);

 private:
  std::string command_;
  mutable std::mutex mu_;
  int to_child_ = -1;
  int from_child_ = -1;
  int pid_ = -1;
  mutable std::string buffer_;
};

/// Rescore `candidates` with `scorer`, sort by (score desc, id asc) and keep
/// the first `top_n`. Each returned candidate keeps its prefetch score in
/// `prefetch_score`; `score` is the rerank score. Throws
/// std::invalid_argument on an empty list or an id missing from the corpus.
CandidateList rerank(const Query& q, const CandidateList& candidates, const Scorer& scorer,
                     const Corpus& corpus, std::size_t top_n);

}  // namespace citerec
