#include "citerec/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace citerec::nn {

Matrix xavier_uniform(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

std::vector<double> positional_encoding(std::size_t position, std::size_t d) {
  std::vector<double> pe(d);
  const double pos = static_cast<double>(position);
  for (std::size_t k = 0; k < d; k += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(d));
    pe[k] = std::sin(pos * freq);
    if (k + 1 < d) pe[k + 1] = std::cos(pos * freq);
  }
  return pe;
}

Matrix positional_encoding_table(std::size_t n, std::size_t d) {
  Matrix table(static_cast<Index>(n), static_cast<Index>(d));
  for (std::size_t p = 0; p < n; ++p) {
    const auto row = positional_encoding(p, d);
    for (std::size_t k = 0; k < d; ++k) table(static_cast<Index>(p), static_cast<Index>(k)) = row[k];
  }
  return table;
}

Linear::Linear(const std::string& name, Index in, Index out, Rng& rng)
    : weight(name + ".weight", xavier_uniform(in, out, rng)),
      bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::forward(Tape& tape, Var x) const {
  return add_row(matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void TransformerLayerConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || ff_dim <= 0) {
    throw std::invalid_argument("transformer config: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("transformer config: model_dim " + std::to_string(model_dim) +
                                " is not divisible by heads " + std::to_string(heads));
  }
}

TransformerLayer::TransformerLayer(const std::string& name, const TransformerLayerConfig& cfg,
                                   Rng& rng)
    : query(name + ".query", cfg.model_dim, cfg.model_dim, rng),
      key(name + ".key", cfg.model_dim, cfg.model_dim, rng),
      value(name + ".value", cfg.model_dim, cfg.model_dim, rng),
      output(name + ".output", cfg.model_dim, cfg.model_dim, rng),
      ff_in(name + ".ff_in", cfg.model_dim, cfg.ff_dim, rng),
      ff_out(name + ".ff_out", cfg.ff_dim, cfg.model_dim, rng),
      norm1_gain(name + ".norm1.gain", Matrix::Ones(1, cfg.model_dim)),
      norm1_bias(name + ".norm1.bias", Matrix::Zero(1, cfg.model_dim)),
      norm2_gain(name + ".norm2.gain", Matrix::Ones(1, cfg.model_dim)),
      norm2_bias(name + ".norm2.bias", Matrix::Zero(1, cfg.model_dim)),
      cfg_(cfg) {
  cfg.validate();
}

Var TransformerLayer::forward(Tape& tape, Var x, const std::vector<bool>& mask) const {
  const Index d = cfg_.model_dim;
  if (x.cols() != d) throw std::invalid_argument("transformer layer: input width != model_dim");
  if (!mask.empty() && static_cast<Index>(mask.size()) != x.rows()) {
    throw std::invalid_argument("transformer layer: mask length != rows");
  }

  const Var q = query.forward(tape, x);
  const Var k = key.forward(tape, x);
  const Var v = value.forward(tape, x);
  const Index head_dim = d / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (Index h = 0; h < cfg_.heads; ++h) {
    const Var qh = slice_cols(q, h * head_dim, head_dim);
    const Var kh = slice_cols(k, h * head_dim, head_dim);
    const Var vh = slice_cols(v, h * head_dim, head_dim);
    const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    const Var weights = softmax_rows(scores, mask, mask);
    heads.push_back(matmul(weights, vh));
  }
  const Var attended = output.forward(tape, concat_cols(heads));
  const Var h1 = layer_norm_rows(add(x, attended), tape.param(norm1_gain), tape.param(norm1_bias),
                                 cfg_.layer_norm_eps);
  const Var ff = ff_out.forward(tape, relu(ff_in.forward(tape, h1)));
  return layer_norm_rows(add(h1, ff), tape.param(norm2_gain), tape.param(norm2_bias),
                         cfg_.layer_norm_eps);
}

void TransformerLayer::collect(std::vector<Parameter*>& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
  ff_in.collect(out);
  ff_out.collect(out);
  out.push_back(&norm1_gain);
  out.push_back(&norm1_bias);
  out.push_back(&norm2_gain);
  out.push_back(&norm2_bias);
}

MultiHeadPooling::MultiHeadPooling(const std::string& name, int model_dim, int heads, Rng& rng)
    : heads_(heads) {
  if (heads <= 0 || model_dim % heads != 0) {
    throw std::invalid_argument("multi-head pooling: model_dim must be divisible by heads");
  }
  // Each head's value map is its own d -> d/heads linear map; initialize the
  // blocks with their own fan sizes.
  const Index head_dim = model_dim / heads;
  Matrix wv(model_dim, model_dim);
  for (int h = 0; h < heads; ++h) wv.middleCols(h * head_dim, head_dim) = xavier_uniform(model_dim, head_dim, rng);
  value = Linear(name + ".value", model_dim, model_dim, rng);
  value.weight.value = wv;
  Matrix wa(model_dim, heads);
  for (int h = 0; h < heads; ++h) wa.col(h) = xavier_uniform(model_dim, 1, rng);
  score = Linear(name + ".score", model_dim, heads, rng);
  score.weight.value = wa;
  project = Linear(name + ".project", model_dim, model_dim, rng);
}

Var MultiHeadPooling::forward(Tape& tape, Var x, const std::vector<bool>& mask) const {
  const Index d = x.cols();
  const Index head_dim = d / heads_;
  const Var values = value.forward(tape, x);                        // n x d
  const Var weights = softmax_rows(transpose(score.forward(tape, x)), mask);  // heads x n
  std::vector<Var> pooled;
  pooled.reserve(static_cast<std::size_t>(heads_));
  for (Index h = 0; h < heads_; ++h) {
    pooled.push_back(matmul(slice_rows(weights, h, 1), slice_cols(values, h * head_dim, head_dim)));
  }
  return project.forward(tape, relu(concat_cols(pooled)));
}

void MultiHeadPooling::collect(std::vector<Parameter*>& out) {
  value.collect(out);
  score.collect(out);
  project.collect(out);
}

}  // namespace citerec::nn
