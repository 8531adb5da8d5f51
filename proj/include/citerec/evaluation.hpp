#pragma once

#include "citerec/corpus.hpp"
#include "citerec/reranker.hpp"
#include "citerec/retrieval.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace citerec {

inline constexpr std::array<std::size_t, 6> kRecallCutoffs{10, 100, 200, 500, 1000, 2000};
inline constexpr std::size_t kMrrCutoff = 2000;

/// 1/rank of the cited paper, or 0 when it is not within the first `cutoff`.
double reciprocal_rank(const CandidateList& candidates, std::string_view cited_id,
                       std::size_t cutoff = kMrrCutoff);
/// 1 if the cited paper is among the first `k`, else 0.
int recall_at_k(const CandidateList& candidates, std::string_view cited_id, std::size_t k);

/// Guarantee the cited paper is in the list: if absent it is appended, or
/// replaces the last entry once the list holds `n`. The inserted entry takes
/// the score of the entry it follows or replaces.
CandidateList oracle_prefetch(CandidateList candidates, std::string_view cited_id, std::size_t n);

struct EvalResult {
  double mrr = 0.0;
  std::map<std::size_t, double> recall_at;
  std::size_t query_count = 0;
  /// 1-based rank of the cited paper per query; 0 when not retrieved.
  std::vector<std::size_t> ranks;
};

/// Aggregate per-query ranks in query order.
EvalResult summarize_ranks(std::vector<std::size_t> ranks, const std::vector<std::size_t>& ks,
                           std::size_t mrr_cutoff = kMrrCutoff);

struct StageTiming {
  std::string stage;
  std::size_t k_r = 0;
  double mean_ms = 0.0;
  /// NaN with a single repetition.
  double std_ms = 0.0;
  std::size_t repetitions = 0;
};

struct TimingReport {
  std::vector<StageTiming> rows;
  std::string host;
};

std::string host_descriptor();

struct PrefetchEvalOptions {
  std::vector<std::size_t> ks{kRecallCutoffs.begin(), kRecallCutoffs.end()};
  std::size_t mrr_cutoff = kMrrCutoff;
  bool oracle_prefetch = false;
  unsigned threads = 1;
};

struct PrefetchEvaluation {
  EvalResult result;
  TimingReport timing;
};

/// Prefetch max(ks, mrr_cutoff) candidates per query and score them.
PrefetchEvaluation evaluate_prefetcher(const Prefetcher& prefetcher, const std::vector<Query>& queries,
                                       const PrefetchEvalOptions& opts = {});

struct PipelineRow {
  std::size_t k_r = 0;
  double final_recall = 0.0;     // Recall@final_k after reranking
  double final_mrr = 0.0;
  double prefetch_recall = 0.0;  // Recall@K_r of the prefetched list
};

struct PipelineResult {
  std::size_t final_k = 10;
  std::size_t query_count = 0;
  std::vector<PipelineRow> rows;  // sorted by K_r
};

/// For each K_r: prefetch K_r, rerank all of them with `scorer`, and measure
/// Recall@final_k. Each candidate is scored once per query and reused across
/// K_r values, which is exact because the scorer is pure and the top-K_r
/// lists are prefixes of one another. Throws std::invalid_argument if a K_r
/// is below final_k.
PipelineResult evaluate_pipeline(const Prefetcher& prefetcher, const Scorer& scorer, const Corpus& corpus,
                                 std::vector<std::size_t> k_rs, const std::vector<Query>& queries,
                                 std::size_t final_k = 10, bool use_oracle_prefetch = false,
                                 unsigned threads = 1);

/// Wall-clock per query of each stage for every K_r. Each repetition runs
/// every query once; a warm-up pass is run first and discarded.
TimingReport bench_timing(const Prefetcher& prefetcher, const Scorer& scorer, const Corpus& corpus,
                          const std::vector<Query>& queries, std::vector<std::size_t> k_rs,
                          std::size_t repetitions);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
/// Least-squares line through (x, y).
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// CSV and text output.
std::string eval_csv(const EvalResult& r, std::size_t mrr_cutoff = kMrrCutoff);
std::string pipeline_csv(const PipelineResult& r);
std::string timing_csv(const TimingReport& r);

struct NamedResult {
  std::string name;
  EvalResult result;
  double mean_prefetch_ms = 0.0;
};
std::string format_prefetch_table(const std::vector<NamedResult>& rows);
std::string format_pipeline_table(const PipelineResult& r);

}  // namespace citerec
