#include "citerec/evaluation.hpp"

#include "citerec/parallel.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace citerec {

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return {buf, end};
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

double reciprocal_rank(const CandidateList& candidates, std::string_view cited_id, std::size_t cutoff) {
  if (cutoff == 0) throw std::invalid_argument("reciprocal_rank: cutoff must be at least 1");
  const std::size_t r = candidates.rank_of(cited_id);
  if (r == 0 || r > cutoff) return 0.0;
  return 1.0 / static_cast<double>(r);
}

int recall_at_k(const CandidateList& candidates, std::string_view cited_id, std::size_t k) {
  const std::size_t r = candidates.rank_of(cited_id);
  return r != 0 && r <= k ? 1 : 0;
}

CandidateList oracle_prefetch(CandidateList candidates, std::string_view cited_id, std::size_t n) {
  if (n == 0) throw std::invalid_argument("oracle_prefetch: n must be at least 1");
  if (candidates.rank_of(cited_id) != 0) return candidates;
  if (candidates.items.size() > n) candidates.items.resize(n);
  Candidate c{std::string(cited_id), 0.0};
  if (!candidates.items.empty()) {
    c.score = candidates.items.back().score;
    c.prefetch_score = candidates.items.back().prefetch_score;
  }
  if (candidates.items.size() == n) {
    candidates.items.back() = std::move(c);
  } else {
    candidates.items.push_back(std::move(c));
  }
  return candidates;
}

EvalResult summarize_ranks(std::vector<std::size_t> ranks, const std::vector<std::size_t>& ks,
                           std::size_t mrr_cutoff) {
  EvalResult r;
  r.query_count = ranks.size();
  double rr = 0.0;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t rank : ranks) {
    if (rank != 0 && rank <= mrr_cutoff) rr += 1.0 / static_cast<double>(rank);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (rank != 0 && rank <= ks[j]) ++hits[j];
    }
  }
  const double n = static_cast<double>(ranks.size());
  r.mrr = ranks.empty() ? 0.0 : rr / n;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    r.recall_at[ks[j]] = ranks.empty() ? 0.0 : static_cast<double>(hits[j]) / n;
  }
  r.ranks = std::move(ranks);
  return r;
}

std::string host_descriptor() {
  char name[256] = {};
  gethostname(name, sizeof name - 1);
  return std::string(name) + " (" + std::to_string(std::thread::hardware_concurrency()) + " hw threads)";
}

PrefetchEvaluation evaluate_prefetcher(const Prefetcher& prefetcher, const std::vector<Query>& queries,
                                       const PrefetchEvalOptions& opts) {
  if (opts.ks.empty()) throw std::invalid_argument("evaluate_prefetcher: no recall cutoffs");
  std::size_t depth = opts.mrr_cutoff;
  for (std::size_t k : opts.ks) depth = std::max(depth, k);

  std::vector<std::size_t> ranks(queries.size(), 0);
  std::vector<double> times(queries.size(), 0.0);
  parallel_for(queries.size(), opts.threads, [&](std::size_t i) {
    const auto t0 = Clock::now();
    CandidateList list = prefetcher.prefetch(queries[i], depth);
    times[i] = ms_since(t0);
    if (opts.oracle_prefetch) list = oracle_prefetch(std::move(list), queries[i].cited_id, depth);
    ranks[i] = list.rank_of(queries[i].cited_id);
  });

  PrefetchEvaluation out;
  out.result = summarize_ranks(std::move(ranks), opts.ks, opts.mrr_cutoff);
  out.timing.host = host_descriptor();
  out.timing.rows.push_back(StageTiming{"prefetch", depth, mean_of(times), sample_std(times), times.size()});
  return out;
}

PipelineResult evaluate_pipeline(const Prefetcher& prefetcher, const Scorer& scorer, const Corpus& corpus,
                                 std::vector<std::size_t> k_rs, const std::vector<Query>& queries,
                                 std::size_t final_k, bool use_oracle_prefetch, unsigned threads) {
  if (k_rs.empty()) throw std::invalid_argument("evaluate_pipeline: no K_r values");
  if (final_k == 0) throw std::invalid_argument("evaluate_pipeline: final K must be at least 1");
  std::sort(k_rs.begin(), k_rs.end());
  k_rs.erase(std::unique(k_rs.begin(), k_rs.end()), k_rs.end());
  if (k_rs.front() < final_k) {
    throw std::invalid_argument("evaluate_pipeline: K_r " + std::to_string(k_rs.front()) +
                                " is below the final cutoff " + std::to_string(final_k));
  }
  const std::size_t depth = k_rs.back();
  const std::size_t nk = k_rs.size();

  // Per query, per K_r: final rank and whether the prefetch list held the cited paper.
  std::vector<std::vector<std::size_t>> final_rank(queries.size(), std::vector<std::size_t>(nk, 0));
  std::vector<std::vector<int>> fetched(queries.size(), std::vector<int>(nk, 0));

  parallel_for(queries.size(), threads, [&](std::size_t qi) {
    const Query& q = queries[qi];
    const CandidateList full = prefetcher.prefetch(q, depth);
    std::unordered_map<std::string, double> cache;
    auto score_of = [&](const std::string& id) {
      auto it = cache.find(id);
      if (it != cache.end()) return it->second;
      const PaperRecord* paper = corpus.find_paper(id);
      if (paper == nullptr) throw std::invalid_argument("evaluate_pipeline: unknown candidate " + id);
      const double s = scorer.score(q, *paper);
      cache.emplace(id, s);
      return s;
    };
    for (std::size_t j = 0; j < nk; ++j) {
      CandidateList prefix;
      prefix.items.assign(full.items.begin(),
                          full.items.begin() + static_cast<std::ptrdiff_t>(std::min(k_rs[j], full.size())));
      if (use_oracle_prefetch) prefix = oracle_prefetch(std::move(prefix), q.cited_id, k_rs[j]);
      fetched[qi][j] = prefix.rank_of(q.cited_id) != 0 ? 1 : 0;
      for (auto& c : prefix.items) {
        c.prefetch_score = c.score;
        c.score = score_of(c.paper_id);
      }
      sort_candidates(prefix.items);
      final_rank[qi][j] = prefix.rank_of(q.cited_id);
    }
  });

  PipelineResult out;
  out.final_k = final_k;
  out.query_count = queries.size();
  const double n = static_cast<double>(queries.size());
  for (std::size_t j = 0; j < nk; ++j) {
    std::size_t hits = 0;
    std::size_t held = 0;
    double rr = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const std::size_t r = final_rank[qi][j];
      if (r != 0 && r <= final_k) ++hits;
      if (r != 0) rr += 1.0 / static_cast<double>(r);
      held += static_cast<std::size_t>(fetched[qi][j]);
    }
    PipelineRow row;
    row.k_r = k_rs[j];
    if (!queries.empty()) {
      row.final_recall = static_cast<double>(hits) / n;
      row.final_mrr = rr / n;
      row.prefetch_recall = static_cast<double>(held) / n;
    }
    out.rows.push_back(row);
  }
  return out;
}

TimingReport bench_timing(const Prefetcher& prefetcher, const Scorer& scorer, const Corpus& corpus,
                          const std::vector<Query>& queries, std::vector<std::size_t> k_rs,
                          std::size_t repetitions) {
  if (repetitions == 0) throw std::invalid_argument("bench_timing: repetitions must be at least 1");
  if (queries.empty()) throw std::invalid_argument("bench_timing: no queries");
  std::sort(k_rs.begin(), k_rs.end());
  k_rs.erase(std::unique(k_rs.begin(), k_rs.end()), k_rs.end());

  TimingReport report;
  report.host = host_descriptor();
  const double nq = static_cast<double>(queries.size());
  // K_r values are interleaved per query so that drift in machine speed
  // spreads evenly over them.
  const std::size_t nk = k_rs.size();
  std::vector<std::vector<double>> prefetch_ms(nk);
  std::vector<std::vector<double>> rerank_ms(nk);
  for (std::size_t rep = 0; rep <= repetitions; ++rep) {
    std::vector<double> p_total(nk, 0.0);
    std::vector<double> r_total(nk, 0.0);
    for (const Query& q : queries) {
      for (std::size_t j = 0; j < nk; ++j) {
        auto t0 = Clock::now();
        CandidateList list = prefetcher.prefetch(q, k_rs[j]);
        p_total[j] += ms_since(t0);
        t0 = Clock::now();
        CandidateList ranked = rerank(q, list, scorer, corpus, list.size());
        r_total[j] += ms_since(t0);
        if (ranked.empty()) throw std::logic_error("bench_timing: empty rerank result");
      }
    }
    if (rep == 0) continue;  // warm-up
    for (std::size_t j = 0; j < nk; ++j) {
      prefetch_ms[j].push_back(p_total[j] / nq);
      rerank_ms[j].push_back(r_total[j] / nq);
    }
  }
  std::vector<StageTiming> rerank_rows;
  for (std::size_t j = 0; j < nk; ++j) {
    report.rows.push_back(
        StageTiming{"prefetch", k_rs[j], mean_of(prefetch_ms[j]), sample_std(prefetch_ms[j]), repetitions});
    rerank_rows.push_back(
        StageTiming{"rerank", k_rs[j], mean_of(rerank_ms[j]), sample_std(rerank_ms[j]), repetitions});
  }
  report.rows.insert(report.rows.end(), rerank_rows.begin(), rerank_rows.end());
  return report;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

std::string eval_csv(const EvalResult& r, std::size_t mrr_cutoff) {
  std::string out = "metric,K,value\n";
  out += "mrr," + std::to_string(mrr_cutoff) + "," + num(r.mrr) + "\n";
  for (const auto& [k, v] : r.recall_at) out += "recall," + std::to_string(k) + "," + num(v) + "\n";
  out += "queries,0," + std::to_string(r.query_count) + "\n";
  return out;
}

std::string pipeline_csv(const PipelineResult& r) {
  std::string out = "metric,K,value\n";
  const std::string fk = std::to_string(r.final_k);
  for (const auto& row : r.rows) {
    const std::string k = std::to_string(row.k_r);
    out += "final_recall@" + fk + "," + k + "," + num(row.final_recall) + "\n";
    out += "final_mrr," + k + "," + num(row.final_mrr) + "\n";
    out += "prefetch_recall," + k + "," + num(row.prefetch_recall) + "\n";
  }
  return out;
}

std::string timing_csv(const TimingReport& r) {
  std::string out = "stage,K_r,mean_ms,std_ms\n";
  for (const auto& row : r.rows) {
    out += row.stage + "," + std::to_string(row.k_r) + "," + num(row.mean_ms) + "," +
           (std::isnan(row.std_ms) ? std::string() : num(row.std_ms)) + "\n";
  }
  return out;
}

std::string format_prefetch_table(const std::vector<NamedResult>& rows) {
  std::vector<std::size_t> ks;
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.result.recall_at) {
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    }
  }
  std::sort(ks.begin(), ks.end());
  std::size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());

  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string out = std::string("model") + std::string(name_w - 5, ' ') + pad("ms", 9) + pad("MRR", 8);
  for (std::size_t k : ks) out += pad("R@" + std::to_string(k), 8);
  out += "\n";
  for (const auto& r : rows) {
    out += r.name + std::string(name_w - r.name.size(), ' ') + pad(fixed(r.mean_prefetch_ms, 2), 9) +
           pad(fixed(r.result.mrr), 8);
    for (std::size_t k : ks) {
      auto it = r.result.recall_at.find(k);
      out += pad(it == r.result.recall_at.end() ? "-" : fixed(it->second), 8);
    }
    out += "\n";
  }
  return out;
}

std::string format_pipeline_table(const PipelineResult& r) {
  std::string out = "    K_r  R@" + std::to_string(r.final_k) + " final   MRR final  R@K_r prefetch\n";
  for (const auto& row : r.rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%7zu  %9.4f  %9.4f  %14.4f\n", row.k_r, row.final_recall, row.final_mrr,
                  row.prefetch_recall);
    out += line;
  }
  return out;
}

}  // namespace citerec
