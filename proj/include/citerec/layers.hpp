#pragma once

#include "citerec/autodiff.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace citerec::nn {

using Rng = std::mt19937_64;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Index rows, Index cols, Rng& rng);

/// Sinusoidal encoding: component 2i is sin(pos / 10000^(2i/d)), 2i+1 the cosine.
std::vector<double> positional_encoding(std::size_t position, std::size_t d);
/// Rows 0..n-1 of the encoding table.
Matrix positional_encoding_table(std::size_t n, std::size_t d);

/// Affine map x W + b with W stored in (in x out) layout.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng);

  [[nodiscard]] Var forward(Tape& tape, Var x) const;
  void collect(std::vector<Parameter*>& out);
};

struct TransformerLayerConfig {
  int model_dim = 128;
  int heads = 4;
  int ff_dim = 256;
  double dropout = 0.0;  // kept for config parity; inference and training run without dropout
  double layer_norm_eps = 1e-5;

  void validate() const;
};

/// Post-norm encoder layer: self-attention, residual, layer norm, then a
/// ReLU feed-forward block, residual, layer norm.
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const std::string& name, const TransformerLayerConfig& cfg, Rng& rng);

  /// `mask[i] == false` marks padding: padded rows neither attend nor are
  /// attended to. Empty mask means every row is live. Throws if all rows are
  /// masked.
  [[nodiscard]] Var forward(Tape& tape, Var x, const std::vector<bool>& mask = {}) const;

  void collect(std::vector<Parameter*>& out);
  [[nodiscard]] const TransformerLayerConfig& config() const { return cfg_; }

  Linear query, key, value, output, ff_in, ff_out;
  Parameter norm1_gain, norm1_bias, norm2_gain, norm2_bias;

 private:
  TransformerLayerConfig cfg_;
};

/// Attention pooling of a token matrix into one vector. Head j projects each
/// row to a d/heads value and a scalar score, softmaxes the scores over the
/// live rows, and sums the values with those weights. The head outputs are
/// concatenated, passed through ReLU, then through a final d x d map.
///
/// Per-head value maps are stored side by side in one (d x d) matrix; column
/// block j is head j. Score maps are likewise the columns of one (d x heads)
/// matrix.
class MultiHeadPooling {
 public:
  MultiHeadPooling() = default;
  MultiHeadPooling(const std::string& name, int model_dim, int heads, Rng& rng);

  [[nodiscard]] Var forward(Tape& tape, Var x, const std::vector<bool>& mask = {}) const;
  void collect(std::vector<Parameter*>& out);

  [[nodiscard]] int heads() const { return heads_; }

  Linear value;
  Linear score;
  Linear project;

 private:
  int heads_ = 1;
};

}  // namespace citerec::nn
