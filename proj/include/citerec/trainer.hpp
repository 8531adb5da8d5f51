#pragma once

// Triplet-loss training for both stages.

#include "citerec/autodiff.hpp"
#include "citerec/corpus.hpp"
#include "citerec/hatten.hpp"
#include "citerec/layers.hpp"
#include "citerec/optimizer.hpp"
#include "citerec/reranker.hpp"
#include "citerec/retrieval.hpp"
#include "citerec/textprep.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace citerec {

/// max(s_neg - s_pos + m, 0). Throws std::invalid_argument unless m > 0.
double triplet_loss(double s_neg, double s_pos, double m);
nn::Var triplet_loss(nn::Var s_neg, nn::Var s_pos, double m);

enum class TripletSource { MinedNegative, RandomNegative, MinedPositive };
std::string_view triplet_source_name(TripletSource s);

/// (query, positive, negative). `query` indexes the training query list.
struct Triplet {
  std::size_t query = 0;
  std::string positive;
  std::string negative;
  TripletSource source = TripletSource::MinedNegative;
};

struct MiningConfig {
  std::size_t candidate_pool = 100;  // K_n
  std::size_t negatives_per_query = 4;
  std::size_t random_negatives_per_query = 1;
  std::size_t refresh_period = 5000;  // N_iter
  bool positive_mining = true;
  double jaccard_threshold = 0.05;    // tau
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double margin = 0.1;
  std::size_t batch_size = 64;

  static OptimizerConfig prefetch_defaults();
  static OptimizerConfig rerank_defaults();
  [[nodiscard]] nn::AdamConfig adam() const;
};

// ---------------------------------------------------------------------------
// Mining.

struct NegativeSample {
  std::vector<std::string> ids;
  /// Fewer than `count` ids were available; all of them were returned.
  bool short_pool = false;
};

/// Uniform sample without replacement of `count` ids from `pool` minus the
/// cited paper.
NegativeSample mine_negatives(const CandidateList& pool, std::string_view cited_id, std::size_t count,
                              nn::Rng& rng);
/// Same, prefetching the top K_n from `prefetcher` first.
NegativeSample mine_negatives(const Query& q, const Prefetcher& prefetcher, std::size_t k_n,
                              std::size_t count, nn::Rng& rng);

struct PositiveChoice {
  std::optional<std::string> positive;
  double jaccard = 0.0;
  std::optional<std::string> random_negative;
};

/// Content-word sets of every paper (title + abstract), used for Jaccard
/// positive mining.
class PositiveMiner {
 public:
  explicit PositiveMiner(const Corpus& corpus);

  /// The pool candidate with the largest Jaccard overlap with the query
  /// text, if it reaches `threshold`; ties go to the earlier pool entry. The
  /// cited and citing papers are never chosen. The random negative is drawn
  /// uniformly from the corpus minus citing, cited and the chosen positive.
  [[nodiscard]] PositiveChoice mine(const Query& q, const CandidateList& pool, double threshold,
                                    nn::Rng& rng) const;
  [[nodiscard]] std::optional<std::string> random_negative(const Query& q, std::string_view positive,
                                                           nn::Rng& rng) const;
  [[nodiscard]] const TokenSet& paper_set(std::size_t i) const { return sets_[i]; }
  [[nodiscard]] const Corpus& corpus() const { return corpus_; }

 private:
  const Corpus& corpus_;
  std::vector<TokenSet> sets_;
};

/// Mining state of one training query, refreshed with the index.
struct QueryPool {
  CandidateList candidates;  // top K_n of the current index
  std::optional<std::string> positive;
};

std::vector<QueryPool> refresh_pools(const Prefetcher& prefetcher, const std::vector<Query>& queries,
                                     const PositiveMiner& miner, const MiningConfig& cfg, unsigned threads = 1);

struct TripletBatch {
  std::vector<std::size_t> queries;  // indices into the training query list
  std::vector<Triplet> triplets;
  std::size_t skipped = 0;      // cited paper missing from the corpus
  std::size_t short_pools = 0;  // fewer mined negatives than requested
};

/// Per query: one triplet per mined negative, one per random negative
/// (cited vs random paper), and, when a positive was mined, one triplet of
/// positive vs the same random paper.
TripletBatch assemble_prefetch_batch(std::span<const std::size_t> batch, const std::vector<Query>& queries,
                                     const std::vector<QueryPool>& pools, const PositiveMiner& miner,
                                     const MiningConfig& cfg, nn::Rng& rng);

/// Mean triplet loss of a batch under the model; documents and queries are
/// each encoded once.
nn::Var prefetch_batch_loss(nn::Tape& tape, const HAttenModel& model, const TripletBatch& batch,
                            const std::vector<Query>& queries, const Corpus& corpus, double margin);

// ---------------------------------------------------------------------------
// Prefetcher training.

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PrefetchTrainConfig {
  MiningConfig mining;
  OptimizerConfig optimizer = OptimizerConfig::prefetch_defaults();
  std::size_t iterations = 15000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  /// Where refresh checkpoints and metrics.csv go; empty keeps nothing on disk.
  std::filesystem::path output_dir;
  /// Validation queries scored at each refresh (0 = all).
  std::size_t validation_limit = 0;

  [[nodiscard]] nlohmann::json to_json() const;
  static PrefetchTrainConfig from_json(const nlohmann::json& j);
};

struct RefreshRecord {
  std::size_t iteration = 0;
  std::size_t refresh = 0;
  double loss = 0.0;  // mean batch loss since the previous record; NaN at iteration 0
  double val_mrr = 0.0;
  double val_recall10 = 0.0;
  std::filesystem::path checkpoint;
};

struct PrefetchTrainResult {
  std::vector<RefreshRecord> history;  // iteration 0 first, then one per refresh
  std::size_t iterations = 0;
  std::size_t skipped_queries = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs the loop on `model` in place. An index for the initial weights is
/// built first; every refresh_period iterations a checkpoint is written, the
/// index rebuilt, the mining pools refreshed and validation metrics logged.
/// Throws TrainingDiverged on a non-finite loss.
PrefetchTrainResult train_prefetcher(HAttenModel& model, const Corpus& corpus, const std::vector<Query>& train,
                                     const std::vector<Query>& validation, const PrefetchTrainConfig& cfg,
                                     const ProgressFn& progress = {});

std::string metrics_csv(const std::vector<RefreshRecord>& history);

// ---------------------------------------------------------------------------
// Reranker training.

struct RerankTrainConfig {
  OptimizerConfig optimizer = OptimizerConfig::rerank_defaults();
  std::size_t negatives = 62;
  std::size_t candidates = 2000;  // K_r
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t log_every = 50;
  std::filesystem::path output_dir;

  [[nodiscard]] nlohmann::json to_json() const;
  static RerankTrainConfig from_json(const nlohmann::json& j);
};

/// Mean over negatives of triplet_loss(s(q, neg), s(q, cited), m) for any scorer.
double reranker_batch_loss(const Scorer& scorer, const Query& q, const PaperRecord& cited,
                           const std::vector<const PaperRecord*>& negatives, double margin);
nn::Var reranker_batch_loss(nn::Tape& tape, const CrossEncoder& model, const Query& q, const PaperRecord& cited,
                            const std::vector<const PaperRecord*>& negatives, double margin);

struct RerankTrainResult {
  std::vector<double> losses;  // one per step
  std::size_t skipped_queries = 0;
};

/// Each step takes the next training query, samples `negatives` papers from
/// its top-K_r non-cited prefetch list and takes one optimizer step on the
/// mean triplet loss.
RerankTrainResult train_reranker(CrossEncoder& model, const Corpus& corpus, const std::vector<Query>& train,
                                 const Prefetcher& prefetcher, const RerankTrainConfig& cfg,
                                 const ProgressFn& progress = {});

}  // namespace citerec
