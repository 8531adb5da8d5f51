#include "citerec/hatten.hpp"

#include "citerec/parallel.hpp"

#include <fstream>
#include <iostream>
#include <stdexcept>

namespace citerec {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void HAttenConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || ff_dim <= 0 || embedding_dim <= 0 || max_paragraph_tokens <= 0) {
    throw std::invalid_argument("HAtten config: all dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("HAtten config: d = " + std::to_string(model_dim) +
                                " is not divisible by n_head = " + std::to_string(heads));
  }
  if (dropout != 0.0) throw std::invalid_argument("HAtten config: dropout is not supported, set it to 0");
}

nlohmann::json HAttenConfig::to_json() const {
  return {{"d", model_dim},
          {"n_head", heads},
          {"ff_dim", ff_dim},
          {"max_paragraph_tokens", max_paragraph_tokens},
          {"embedding_dim", embedding_dim},
          {"layer_norm_eps", layer_norm_eps},
          {"dropout", dropout}};
}

HAttenConfig HAttenConfig::from_json(const nlohmann::json& j) {
  HAttenConfig c;
  c.model_dim = j.value("d", c.model_dim);
  c.heads = j.value("n_head", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_paragraph_tokens = j.value("max_paragraph_tokens", c.max_paragraph_tokens);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

HAttenConfig load_hatten_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config " + path.string());
  return HAttenConfig::from_json(nlohmann::json::parse(in));
}

namespace {

nn::TransformerLayerConfig layer_config(const HAttenConfig& c) {
  return {c.model_dim, c.heads, c.ff_dim, c.dropout, c.layer_norm_eps};
}

}  // namespace

HAttenModel::HAttenModel(HAttenConfig cfg, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (!vocab_) throw std::invalid_argument("HAttenModel: vocabulary is required");
  if (vocab_->dim() != static_cast<std::size_t>(cfg_.embedding_dim)) {
    throw std::invalid_argument("HAttenModel: vocabulary dimension " + std::to_string(vocab_->dim()) +
                                " != embedding_dim " + std::to_string(cfg_.embedding_dim));
  }
  nn::Rng rng(seed);
  input_projection = nn::Linear("paragraph.input_projection", cfg_.embedding_dim, cfg_.model_dim, rng);
  paragraph_layer = nn::TransformerLayer("paragraph.transformer", layer_config(cfg_), rng);
  paragraph_pool = nn::MultiHeadPooling("paragraph.pooling", cfg_.model_dim, cfg_.heads, rng);
  type_embeddings = nn::Parameter("document.type_embeddings", nn::xavier_uniform(3, cfg_.model_dim, rng));
  document_layer = nn::TransformerLayer("document.transformer", layer_config(cfg_), rng);
  document_pool = nn::MultiHeadPooling("document.pooling", cfg_.model_dim, cfg_.heads, rng);
  positions_ = nn::positional_encoding_table(static_cast<std::size_t>(cfg_.max_paragraph_tokens),
                                             static_cast<std::size_t>(cfg_.model_dim));
}

Paragraph HAttenModel::make_paragraph(std::string_view text, ParagraphType type) const {
  auto ids = vocab_->lookup(tokenize(text));
  if (ids.size() > static_cast<std::size_t>(cfg_.max_paragraph_tokens)) {
    ids.resize(static_cast<std::size_t>(cfg_.max_paragraph_tokens));
  }
  return Paragraph{std::move(ids), type};
}

DocumentInput HAttenModel::make_document(const PaperRecord& paper) const {
  return DocumentInput{make_paragraph(paper.title, ParagraphType::Title),
                       make_paragraph(paper.abstract, ParagraphType::Abstract)};
}

QueryInput HAttenModel::make_query(const Query& q) const {
  return QueryInput{make_paragraph(q.local_context, ParagraphType::LocalContext),
                    make_paragraph(q.citing_title, ParagraphType::Title),
                    make_paragraph(q.citing_abstract, ParagraphType::Abstract)};
}

Var HAttenModel::encode_paragraph(Tape& tape, const Paragraph& p) const {
  if (p.tokens.empty()) throw std::invalid_argument("encode_paragraph: empty paragraph");
  const auto n = static_cast<nn::Index>(
      std::min(p.tokens.size(), static_cast<std::size_t>(cfg_.max_paragraph_tokens)));
  Matrix words(n, cfg_.embedding_dim);
  for (nn::Index i = 0; i < n; ++i) words.row(i) = vocab_->vector(p.tokens[static_cast<std::size_t>(i)]);
  const Var projected = input_projection.forward(tape, tape.constant(std::move(words)));
  const Var x = nn::add(projected, tape.constant(positions_.topRows(n)));
  return paragraph_pool.forward(tape, paragraph_layer.forward(tape, x));
}

Var HAttenModel::encode_paragraphs(Tape& tape, std::span<const Paragraph> paragraphs) const {
  std::vector<Var> rows;
  const Var types = tape.param(type_embeddings);
  for (const auto& p : paragraphs) {
    if (p.tokens.empty()) continue;
    const Var e = encode_paragraph(tape, p);
    rows.push_back(nn::add(e, nn::slice_rows(types, static_cast<nn::Index>(p.type), 1)));
  }
  if (rows.empty()) throw std::invalid_argument("encode_document: every paragraph is empty");
  const Var stacked = nn::concat_rows(rows);
  const Var pooled = document_pool.forward(tape, document_layer.forward(tape, stacked));
  return nn::l2_normalize_rows(pooled);
}

Var HAttenModel::encode_document(Tape& tape, const DocumentInput& d) const {
  const std::array<Paragraph, 2> ps{d.title, d.abstract};
  return encode_paragraphs(tape, ps);
}

Var HAttenModel::encode_query(Tape& tape, const QueryInput& q) const {
  if (q.local_context.tokens.empty()) throw std::invalid_argument("encode_query: empty local context");
  const std::array<Paragraph, 3> ps{q.local_context, q.citing_title, q.citing_abstract};
  return encode_paragraphs(tape, ps);
}

namespace {

DocEmbedding to_embedding(const Var& v) {
  const Matrix& m = v.value();
  return DocEmbedding{std::vector<double>(m.data(), m.data() + m.size()), true};
}

}  // namespace

DocEmbedding HAttenModel::embed_document(const DocumentInput& d) const {
  Tape tape(false);
  return to_embedding(encode_document(tape, d));
}

DocEmbedding HAttenModel::embed_query(const QueryInput& q) const {
  Tape tape(false);
  return to_embedding(encode_query(tape, q));
}

std::vector<nn::Parameter*> HAttenModel::parameters() {
  std::vector<nn::Parameter*> out;
  input_projection.collect(out);
  paragraph_layer.collect(out);
  paragraph_pool.collect(out);
  out.push_back(&type_embeddings);
  document_layer.collect(out);
  document_pool.collect(out);
  return out;
}

std::vector<const nn::Parameter*> HAttenModel::parameters() const {
  auto ps = const_cast<HAttenModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void HAttenModel::save(const std::filesystem::path& path, nlohmann::json extra_meta) const {
  nlohmann::json meta = std::move(extra_meta);
  meta["model"] = "hatten";
  meta["config"] = cfg_.to_json();
  auto ps = const_cast<HAttenModel*>(this)->parameters();
  nn::write_tensor_file(path, nn::snapshot(ps, std::move(meta)));
}

void HAttenModel::load(const std::filesystem::path& path) {
  const auto file = nn::read_tensor_file(path);
  if (file.meta.value("model", std::string{}) != "hatten") {
    throw std::runtime_error(path.string() + " is not a HAtten checkpoint");
  }
  if (file.meta.at("config") != cfg_.to_json()) {
    throw std::runtime_error(path.string() + ": checkpoint config " + file.meta.at("config").dump() +
                             " does not match model config " + cfg_.to_json().dump());
  }
  nn::restore(file, parameters());
}

HAttenModel HAttenModel::from_checkpoint(const std::filesystem::path& path,
                                         std::shared_ptr<const Vocabulary> vocab) {
  const auto file = nn::read_tensor_file(path);
  if (file.meta.value("model", std::string{}) != "hatten") {
    throw std::runtime_error(path.string() + " is not a HAtten checkpoint");
  }
  HAttenModel model(HAttenConfig::from_json(file.meta.at("config")), std::move(vocab), 0);
  nn::restore(file, model.parameters());
  return model;
}

std::vector<DocEmbedding> encode_corpus(const HAttenModel& model, const Corpus& corpus,
                                        std::size_t batch_size, unsigned threads) {
  const auto& papers = corpus.papers();
  std::vector<DocEmbedding> out(papers.size());
  if (batch_size == 0) batch_size = 1;
  const std::size_t batches = (papers.size() + batch_size - 1) / batch_size;
  parallel_for(batches, threads, [&](std::size_t b) {
    const std::size_t lo = b * batch_size;
    const std::size_t hi = std::min(papers.size(), lo + batch_size);
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        out[i] = model.embed_document(model.make_document(papers[i]));
      } catch (const std::invalid_argument& e) {
        std::cerr << "warning: skipping paper " << papers[i].paper_id << ": " << e.what() << "\n";
      }
    }
  });
  return out;
}

}  // namespace citerec
