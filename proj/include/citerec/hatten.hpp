#pragma once

// Hierarchical attention encoder. A paragraph encoder turns a token sequence
// into one vector (word vectors -> projection -> positional encoding ->
// transformer layer -> multi-head pooling); a document encoder adds a
// learned per-field type embedding to each paragraph vector and runs a
// second transformer layer + pooling over the paragraphs, without positional
// encoding, so it is invariant to paragraph order. Queries and documents
// share all weights.

#include "citerec/autodiff.hpp"
#include "citerec/checkpoint.hpp"
#include "citerec/corpus.hpp"
#include "citerec/layers.hpp"
#include "citerec/textprep.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace citerec {

enum class ParagraphType { Title = 0, Abstract = 1, LocalContext = 2 };

struct Paragraph {
  std::vector<TokenId> tokens;
  ParagraphType type = ParagraphType::Title;
};

struct DocumentInput {
  Paragraph title{{}, ParagraphType::Title};
  Paragraph abstract{{}, ParagraphType::Abstract};
};

struct QueryInput {
  Paragraph local_context{{}, ParagraphType::LocalContext};
  Paragraph citing_title{{}, ParagraphType::Title};
  Paragraph citing_abstract{{}, ParagraphType::Abstract};
};

struct DocEmbedding {
  std::vector<double> vector;
  bool is_normalized = false;
};

struct HAttenConfig {
  int model_dim = 128;      // d
  int heads = 4;            // n_head
  int ff_dim = 256;
  int max_paragraph_tokens = 128;
  int embedding_dim = 200;  // D, width of the frozen word vectors
  double layer_norm_eps = 1e-5;
  double dropout = 0.0;  // only 0 is supported

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static HAttenConfig from_json(const nlohmann::json& j);
};

HAttenConfig load_hatten_config(const std::filesystem::path& path);

class HAttenModel {
 public:
  HAttenModel(HAttenConfig cfg, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed);

  [[nodiscard]] const HAttenConfig& config() const { return cfg_; }
  [[nodiscard]] const Vocabulary& vocabulary() const { return *vocab_; }
  [[nodiscard]] std::shared_ptr<const Vocabulary> vocabulary_ptr() const { return vocab_; }

  /// Tokenize, look up, and truncate to max_paragraph_tokens (prefix kept).
  [[nodiscard]] Paragraph make_paragraph(std::string_view text, ParagraphType type) const;
  [[nodiscard]] DocumentInput make_document(const PaperRecord& paper) const;
  [[nodiscard]] QueryInput make_query(const Query& q) const;

  /// 1 x d paragraph embedding. Throws std::invalid_argument for an empty
  /// paragraph.
  [[nodiscard]] nn::Var encode_paragraph(nn::Tape& tape, const Paragraph& p) const;
  /// 1 x d unit-norm embedding of the non-empty paragraphs; empty ones are
  /// dropped. Throws std::invalid_argument if none remain.
  [[nodiscard]] nn::Var encode_paragraphs(nn::Tape& tape, std::span<const Paragraph> paragraphs) const;
  [[nodiscard]] nn::Var encode_document(nn::Tape& tape, const DocumentInput& d) const;
  /// Throws std::invalid_argument if the local context is empty.
  [[nodiscard]] nn::Var encode_query(nn::Tape& tape, const QueryInput& q) const;

  // Inference helpers on frozen weights; safe to call concurrently.
  [[nodiscard]] DocEmbedding embed_document(const DocumentInput& d) const;
  [[nodiscard]] DocEmbedding embed_query(const QueryInput& q) const;

  [[nodiscard]] std::vector<nn::Parameter*> parameters();
  [[nodiscard]] std::vector<const nn::Parameter*> parameters() const;

  void save(const std::filesystem::path& path, nlohmann::json extra_meta = nlohmann::json::object()) const;
  /// Restores weights; throws if the stored config differs from this model's.
  void load(const std::filesystem::path& path);
  /// Opens a checkpoint, rebuilding the model from the config it stores.
  static HAttenModel from_checkpoint(const std::filesystem::path& path,
                                     std::shared_ptr<const Vocabulary> vocab);

  nn::Linear input_projection;
  nn::TransformerLayer paragraph_layer;
  nn::MultiHeadPooling paragraph_pool;
  nn::Parameter type_embeddings;  // 3 x d, row = ParagraphType
  nn::TransformerLayer document_layer;
  nn::MultiHeadPooling document_pool;

 private:
  HAttenConfig cfg_;
  std::shared_ptr<const Vocabulary> vocab_;
  nn::Matrix positions_;  // max_paragraph_tokens x d
};

/// Encode every paper of the corpus, row i = paper i. Documents are processed
/// in chunks of `batch_size` spread over `threads` workers; results do not
/// depend on either.
std::vector<DocEmbedding> encode_corpus(const HAttenModel& model, const Corpus& corpus,
                                        std::size_t batch_size = 32, unsigned threads = 1);

}  // namespace citerec
