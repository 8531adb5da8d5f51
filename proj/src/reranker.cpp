#include "citerec/reranker.hpp"

#include "citerec/checkpoint.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace citerec {

using nn::Matrix;
using nn::Tape;
using nn::Var;

RerankInput assemble_input(const Query& q, const PaperRecord& candidate, std::size_t max_tokens) {
  if (max_tokens < 3) throw std::invalid_argument("assemble_input: max_tokens must be at least 3");
  enum Piece { CitingTitle, CitingAbstract, LocalContext, CandTitle, CandAbstract };
  std::array<std::vector<std::string>, 5> pieces{tokenize(q.citing_title), tokenize(q.citing_abstract),
                                                 tokenize(q.local_context), tokenize(candidate.title),
                                                 tokenize(candidate.abstract)};
  std::size_t total = 2;
  for (const auto& p : pieces) total += p.size();
  constexpr std::array<Piece, 5> trim_order{CandAbstract, CitingAbstract, CandTitle, CitingTitle, LocalContext};
  for (Piece p : trim_order) {
    if (total <= max_tokens) break;
    const std::size_t cut = std::min(pieces[p].size(), total - max_tokens);
    pieces[p].resize(pieces[p].size() - cut);
    total -= cut;
  }

  RerankInput in;
  in.tokens.reserve(total);
  in.segments.reserve(total);
  auto append = [&](std::vector<std::string>& src, Segment seg) {
    for (auto& t : src) {
      in.tokens.push_back(std::move(t));
      in.segments.push_back(seg);
    }
  };
  in.tokens.emplace_back(kClsToken);
  in.segments.push_back(Segment::A);
  append(pieces[CitingTitle], Segment::A);
  append(pieces[CitingAbstract], Segment::A);
  append(pieces[LocalContext], Segment::A);
  in.tokens.emplace_back(kSepToken);
  in.segments.push_back(Segment::A);
  append(pieces[CandTitle], Segment::B);
  append(pieces[CandAbstract], Segment::B);
  return in;
}

// ---------------------------------------------------------------------------

void CrossEncoderConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || ff_dim <= 0 || layers <= 0 || embedding_dim <= 0 ||
      max_rerank_tokens < 3) {
    throw std::invalid_argument("cross-encoder config: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("cross-encoder config: d must be divisible by heads");
  }
  if (dropout != 0.0) throw std::invalid_argument("cross-encoder config: dropout is not supported, set it to 0");
}

nlohmann::json CrossEncoderConfig::to_json() const {
  return {{"d", model_dim},
          {"n_head", heads},
          {"ff_dim", ff_dim},
          {"layers", layers},
          {"max_rerank_tokens", max_rerank_tokens},
          {"embedding_dim", embedding_dim},
          {"layer_norm_eps", layer_norm_eps},
          {"dropout", dropout},
          {"match_embedding", match_embedding}};
}

CrossEncoderConfig CrossEncoderConfig::from_json(const nlohmann::json& j) {
  CrossEncoderConfig c;
  c.model_dim = j.value("d", c.model_dim);
  c.heads = j.value("n_head", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.layers = j.value("layers", c.layers);
  c.max_rerank_tokens = j.value("max_rerank_tokens", c.max_rerank_tokens);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.dropout = j.value("dropout", c.dropout);
  c.match_embedding = j.value("match_embedding", c.match_embedding);
  c.validate();
  return c;
}

CrossEncoder::CrossEncoder(CrossEncoderConfig cfg, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (!vocab_) throw std::invalid_argument("CrossEncoder: vocabulary is required");
  if (vocab_->dim() != static_cast<std::size_t>(cfg_.embedding_dim)) {
    throw std::invalid_argument("CrossEncoder: vocabulary dimension does not match embedding_dim");
  }
  nn::Rng rng(seed);
  const int d = cfg_.model_dim;
  token_projection = nn::Linear("rerank.token_projection", cfg_.embedding_dim, d, rng);
  special_embeddings = nn::Parameter("rerank.special_embeddings", nn::xavier_uniform(2, d, rng));
  segment_embeddings = nn::Parameter("rerank.segment_embeddings", nn::xavier_uniform(2, d, rng));
  position_embeddings =
      nn::Parameter("rerank.position_embeddings", nn::xavier_uniform(cfg_.max_rerank_tokens, d, rng) * 0.1);
  embed_norm_gain = nn::Parameter("rerank.embed_norm.gain", Matrix::Ones(1, d));
  embed_norm_bias = nn::Parameter("rerank.embed_norm.bias", Matrix::Zero(1, d));
  const nn::TransformerLayerConfig lc{d, cfg_.heads, cfg_.ff_dim, cfg_.dropout, cfg_.layer_norm_eps};
  for (int l = 0; l < cfg_.layers; ++l) {
    layers.emplace_back("rerank.layer" + std::to_string(l), lc, rng);
  }
  head = nn::Linear("rerank.head", d, 1, rng);
  if (cfg_.match_embedding) {
    match_embeddings = nn::Parameter("rerank.match_embeddings", nn::xavier_uniform(2, d, rng));
  }
}

Var CrossEncoder::logit(Tape& tape, const RerankInput& input) const {
  const auto n = static_cast<nn::Index>(input.tokens.size());
  if (n == 0 || n > cfg_.max_rerank_tokens) {
    throw std::invalid_argument("CrossEncoder: input length " + std::to_string(n) + " outside [1, " +
                                std::to_string(cfg_.max_rerank_tokens) + "]");
  }
  if (input.segments.size() != input.tokens.size()) {
    throw std::invalid_argument("CrossEncoder: segment labels do not match tokens");
  }
  Matrix words = Matrix::Zero(n, cfg_.embedding_dim);
  Matrix special = Matrix::Zero(n, 2);
  Matrix segment = Matrix::Zero(n, 2);
  Matrix match = Matrix::Zero(n, 2);
  std::array<std::unordered_set<std::string_view>, 2> seen;
  for (std::size_t i = 0; i < input.tokens.size(); ++i) {
    seen[static_cast<std::size_t>(input.segments[i])].insert(input.tokens[i]);
  }
  for (nn::Index i = 0; i < n; ++i) {
    const auto& tok = input.tokens[static_cast<std::size_t>(i)];
    if (tok == kClsToken) {
      special(i, 0) = 1.0;
    } else if (tok == kSepToken) {
      special(i, 1) = 1.0;
    } else {
      words.row(i) = vocab_->vector(vocab_->lookup(tok));
      const auto other = 1 - static_cast<std::size_t>(input.segments[static_cast<std::size_t>(i)]);
      match(i, seen[other].count(tok) != 0 ? 1 : 0) = 1.0;
    }
    segment(i, static_cast<nn::Index>(input.segments[static_cast<std::size_t>(i)])) = 1.0;
  }
  Var x = token_projection.forward(tape, tape.constant(std::move(words)));
  x = nn::add(x, nn::matmul(tape.constant(std::move(special)), tape.param(special_embeddings)));
  x = nn::add(x, nn::matmul(tape.constant(std::move(segment)), tape.param(segment_embeddings)));
  x = nn::add(x, nn::slice_rows(tape.param(position_embeddings), 0, n));
  if (cfg_.match_embedding) x = nn::add(x, nn::matmul(tape.constant(std::move(match)), tape.param(match_embeddings)));
  x = nn::layer_norm_rows(x, tape.param(embed_norm_gain), tape.param(embed_norm_bias), cfg_.layer_norm_eps);
  for (const auto& layer : layers) x = layer.forward(tape, x);
  return head.forward(tape, nn::slice_rows(x, 0, 1));
}

Var CrossEncoder::forward(Tape& tape, const RerankInput& input) const { return nn::sigmoid(logit(tape, input)); }

double CrossEncoder::score(const RerankInput& input) const {
  Tape tape(false);
  return forward(tape, input).scalar();
}

void CrossEncoder::zero_head() {
  head.weight.value.setZero();
  head.bias.value.setZero();
}

std::vector<nn::Parameter*> CrossEncoder::parameters() {
  std::vector<nn::Parameter*> out;
  token_projection.collect(out);
  out.push_back(&special_embeddings);
  out.push_back(&segment_embeddings);
  out.push_back(&position_embeddings);
  out.push_back(&embed_norm_gain);
  out.push_back(&embed_norm_bias);
  if (cfg_.match_embedding) out.push_back(&match_embeddings);
  for (auto& l : layers) l.collect(out);
  head.collect(out);
  return out;
}

void CrossEncoder::save(const std::filesystem::path& path, nlohmann::json extra_meta) const {
  nlohmann::json meta = std::move(extra_meta);
  meta["model"] = "cross-encoder";
  meta["config"] = cfg_.to_json();
  nn::write_tensor_file(path, nn::snapshot(const_cast<CrossEncoder*>(this)->parameters(), std::move(meta)));
}

CrossEncoder CrossEncoder::from_checkpoint(const std::filesystem::path& path,
                                           std::shared_ptr<const Vocabulary> vocab) {
  const auto file = nn::read_tensor_file(path);
  if (file.meta.value("model", std::string{}) != "cross-encoder") {
    throw std::runtime_error(path.string() + " is not a cross-encoder checkpoint");
  }
  CrossEncoder model(CrossEncoderConfig::from_json(file.meta.at("config")), std::move(vocab), 0);
  nn::restore(file, model.parameters());
  return model;
}

// ---------------------------------------------------------------------------

ExternalScorer::ExternalScorer(std::string command) : command_(std::move(command)) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = fork();
  if (pid < 0) throw std::runtime_error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  pid_ = pid;
  signal(SIGPIPE, SIG_IGN);
}

ExternalScorer::~ExternalScorer() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

std::string ExternalScorer::request_line(const Query& q, const PaperRecord& c) {
  nlohmann::ordered_json req;
  req["query"] = {{"context_id", q.context_id},
                  {"local_context", q.local_context},
                  {"citing_title", q.citing_title},
                  {"citing_abstract", q.citing_abstract}};
  req["candidate"] = {{"paper_id", c.paper_id}, {"title", c.title}, {"abstract", c.abstract}};
  return req.dump() + "\n";
}

double ExternalScorer::parse_response(std::string_view line) {
  nlohmann::json resp;
  try {
    resp = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("external scorer: malformed response: " + std::string(line));
  }
  if (!resp.is_object() || !resp.contains("score") || !resp["score"].is_number()) {
    throw std::runtime_error("external scorer: response lacks a numeric \"score\": " + std::string(line));
  }
  const double s = resp["score"].get<double>();
  if (!(s >= 0.0 && s <= 1.0)) throw std::runtime_error("external scorer: score outside [0, 1]");
  return s;
}

double ExternalScorer::score(const Query& q, const PaperRecord& c) const {
  std::lock_guard lock(mu_);
  const std::string req = request_line(q, c);
  std::size_t sent = 0;
  while (sent < req.size()) {
    const ssize_t w = write(to_child_, req.data() + sent, req.size() - sent);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("external scorer: write failed: " + std::string(std::strerror(errno)));
    }
    sent += static_cast<std::size_t>(w);
  }
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      const std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return parse_response(line);
    }
    char chunk[4096];
    const ssize_t r = read(from_child_, chunk, sizeof chunk);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) throw std::runtime_error("external scorer: process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(r));
  }
}

// ---------------------------------------------------------------------------

CandidateList rerank(const Query& q, const CandidateList& candidates, const Scorer& scorer,
                     const Corpus& corpus, std::size_t top_n) {
  if (candidates.empty()) throw std::invalid_argument("rerank: no candidates");
  CandidateList out;
  out.clipped = candidates.clipped;
  out.items.reserve(candidates.size());
  for (const auto& c : candidates.items) {
    const PaperRecord* paper = corpus.find_paper(c.paper_id);
    if (paper == nullptr) throw std::invalid_argument("rerank: unknown candidate " + c.paper_id);
    const double prefetch = std::isnan(c.prefetch_score) ? c.score : c.prefetch_score;
    out.items.push_back(Candidate{c.paper_id, scorer.score(q, *paper), prefetch});
  }
  sort_candidates(out.items);
  if (out.items.size() > top_n) out.items.resize(top_n);
  return out;
}

}  // namespace citerec
