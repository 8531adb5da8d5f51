#include "citerec/evaluation.hpp"

#include "test_support.hpp"

#include <cmath>
#include <random>

using namespace citerec;
using namespace citerec::testing;

namespace {

// A ranked list of `len` filler ids with "cited" at 1-based `rank` (0 = absent).
CandidateList ranked(std::size_t rank, std::size_t len) {
  CandidateList c;
  for (std::size_t i = 1; i <= len; ++i) {
    c.items.push_back({i == rank ? std::string("cited") : "f" + std::to_string(i), -static_cast<double>(i)});
  }
  return c;
}

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (double& x : v) x /= std::sqrt(s);
  return v;
}

// Random index over `n` papers and random query embeddings for `m` queries.
struct RandomWorld {
  std::vector<PaperRecord> papers;
  std::vector<Query> queries;
  EmbeddingIndex index;
  std::unordered_map<std::string, DocEmbedding> query_vecs;
  std::unique_ptr<Corpus> corpus;

  RandomWorld(std::size_t n, std::size_t m, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> ids;
    std::vector<float> rows;
    for (std::size_t i = 0; i < n; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "p%04zu", i);
      ids.emplace_back(id);
      papers.push_back(paper(id, "t", "a"));
      for (double x : random_unit(rng, d)) rows.push_back(static_cast<float>(x));
    }
    index = EmbeddingIndex(ids, rows, d, "rand");
    corpus = std::make_unique<Corpus>(papers, std::vector<ContextRecord>{});
    for (std::size_t j = 0; j < m; ++j) {
      Query q = query("x CIT", ids[rng() % n]);
      q.context_id = "c" + std::to_string(j);
      query_vecs[q.context_id] = DocEmbedding{random_unit(rng, d), true};
      queries.push_back(q);
    }
  }
};

// Pure pseudo-random score per (query, paper).
class HashScorer final : public Scorer {
 public:
  [[nodiscard]] std::string name() const override { return "hash"; }
  [[nodiscard]] double score(const Query& q, const PaperRecord& c) const override {
    const auto h = std::hash<std::string>{}(q.context_id + "/" + c.paper_id);
    return static_cast<double>(h % 1000) / 1000.0;
  }
};

}  // namespace

TEST(Metrics, ReciprocalRankAndRecallBasics) {
  EXPECT_EQ(reciprocal_rank(ranked(1, 5), "cited"), 1.0);
  EXPECT_EQ(reciprocal_rank(ranked(4, 5), "cited"), 0.25);
  EXPECT_EQ(reciprocal_rank(ranked(0, 5), "cited"), 0.0);
  EXPECT_EQ(reciprocal_rank(ranked(4, 5), "cited", 3), 0.0);
  EXPECT_EQ(recall_at_k(ranked(10, 20), "cited", 10), 1);
  EXPECT_EQ(recall_at_k(ranked(11, 20), "cited", 10), 0);
  EXPECT_EQ(recall_at_k(ranked(0, 20), "cited", 10), 0);
}

TEST(Metrics, TenHandRankings) {
  const std::vector<std::size_t> ranks{1, 4, 10, 11, 0, 2, 150, 2001, 3, 100};
  std::vector<std::size_t> observed;
  for (std::size_t r : ranks) {
    const auto list = ranked(r, 2100);
    observed.push_back(list.rank_of("cited"));
  }
  EXPECT_EQ(observed, ranks);
  const std::vector<std::size_t> ks{10, 100, 200, 500, 1000, 2000};
  const auto e = summarize_ranks(observed, ks);
  // Reciprocal ranks: 1 + 1/4 + 1/10 + 1/11 + 0 + 1/2 + 1/150 + 0 (past 2000) + 1/3 + 1/100.
  const double rr_sum = 1.86 + 711.0 / 1650.0;
  EXPECT_NEAR(e.mrr, rr_sum / 10.0, 1e-15);
  EXPECT_EQ(e.recall_at.at(10), 0.5);
  EXPECT_EQ(e.recall_at.at(100), 0.7);
  EXPECT_EQ(e.recall_at.at(200), 0.8);
  EXPECT_EQ(e.recall_at.at(500), 0.8);
  EXPECT_EQ(e.recall_at.at(1000), 0.8);
  EXPECT_EQ(e.recall_at.at(2000), 0.8);
  EXPECT_EQ(e.query_count, 10u);

  double per_query = 0.0;
  for (std::size_t r : ranks) per_query += reciprocal_rank(ranked(r, 2100), "cited");
  EXPECT_NEAR(per_query, rr_sum, 1e-15);
}

TEST(Metrics, RecallMeanMatchesCount) {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> ranks;
  int hits = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t r = rng() % 40;
    ranks.push_back(r);
    if (r != 0 && r <= 10) ++hits;
  }
  const auto e = summarize_ranks(ranks, {10, 20, 30});
  EXPECT_EQ(e.recall_at.at(10), hits / 100.0);
  EXPECT_LE(e.recall_at.at(10), e.recall_at.at(20));
  EXPECT_LE(e.recall_at.at(20), e.recall_at.at(30));
  EXPECT_GE(e.mrr, 0.0);
  EXPECT_LE(e.mrr, 1.0);
}

TEST(OraclePrefetch, Rules) {
  const auto present = ranked(3, 5);
  EXPECT_EQ(oracle_prefetch(present, "cited", 5).ids(), present.ids());

  const auto full = oracle_prefetch(ranked(0, 5), "cited", 5);
  EXPECT_EQ(full.size(), 5u);
  EXPECT_EQ(full.items.back().paper_id, "cited");
  EXPECT_EQ(full.items[3].paper_id, "f4");

  const auto room = oracle_prefetch(ranked(0, 3), "cited", 5);
  EXPECT_EQ(room.size(), 4u);
  EXPECT_EQ(room.items.back().paper_id, "cited");
  EXPECT_EQ(oracle_prefetch(CandidateList{}, "cited", 2).ids(), std::vector<std::string>{"cited"});
  EXPECT_THROW((void)oracle_prefetch(ranked(0, 3), "cited", 0), std::invalid_argument);
}

TEST(EvaluatePrefetcher, PerfectAndRandom) {
  RandomWorld w(200, 400, 16, 11);
  std::unordered_map<std::string, DocEmbedding> perfect;
  for (const auto& q : w.queries) {
    const auto row = w.index.row(*w.index.row_of(q.cited_id));
    perfect[q.context_id] = DocEmbedding{std::vector<double>(row.begin(), row.end()), true};
  }
  PrefetchEvalOptions opts;
  opts.ks = {10, 100};
  const FixedEmbeddingPrefetcher best("perfect", w.index, perfect);
  const auto e = evaluate_prefetcher(best, w.queries, opts);
  EXPECT_EQ(e.result.mrr, 1.0);
  EXPECT_EQ(e.result.recall_at.at(10), 1.0);

  const FixedEmbeddingPrefetcher random("random", w.index, w.query_vecs);
  const auto r = evaluate_prefetcher(random, w.queries, opts).result;
  // Expectation 10/200; binomial sd over 400 queries is about 0.011.
  EXPECT_NEAR(r.recall_at.at(10), 0.05, 0.045);
  EXPECT_NEAR(r.recall_at.at(100), 0.5, 0.1);

  opts.oracle_prefetch = true;
  opts.ks = {10};
  opts.mrr_cutoff = 10;
  const auto o = evaluate_prefetcher(random, w.queries, opts).result;
  EXPECT_EQ(o.recall_at.at(10), 1.0);
}

TEST(EvaluatePipeline, UpperBoundAndOracleEquality) {
  RandomWorld w(120, 150, 8, 5);
  const FixedEmbeddingPrefetcher pre("random", w.index, w.query_vecs);
  const std::vector<std::size_t> k_rs{10, 20, 50, 100};

  const auto oracle = evaluate_pipeline(pre, OracleScorer(), *w.corpus, k_rs, w.queries);
  double prev = -1.0;
  for (const auto& row : oracle.rows) {
    EXPECT_EQ(row.final_recall, row.prefetch_recall) << row.k_r;
    EXPECT_GE(row.final_recall, prev);
    prev = row.final_recall;
  }

  PrefetchEvalOptions opts;
  opts.ks = {10};
  const auto prefetch_only = evaluate_prefetcher(pre, w.queries, opts).result;
  EXPECT_EQ(oracle.rows.front().final_recall, prefetch_only.recall_at.at(10));

  for (const Scorer* s : std::initializer_list<const Scorer*>{new HashScorer, new ConstantScorer}) {
    const std::unique_ptr<const Scorer> own(s);
    const auto p = evaluate_pipeline(pre, *s, *w.corpus, k_rs, w.queries);
    for (const auto& row : p.rows) EXPECT_LE(row.final_recall, row.prefetch_recall) << s->name() << row.k_r;
  }

  // Constant scores reduce to id order inside each prefetched prefix.
  const auto constant = evaluate_pipeline(pre, ConstantScorer(), *w.corpus, {50}, w.queries);
  int hits = 0;
  for (const auto& q : w.queries) {
    auto ids = pre.prefetch(q, 50).ids();
    std::sort(ids.begin(), ids.end());
    hits += std::find(ids.begin(), ids.begin() + 10, q.cited_id) != ids.begin() + 10 ? 1 : 0;
  }
  EXPECT_EQ(constant.rows[0].final_recall, hits / 150.0);

  const auto forced = evaluate_pipeline(pre, OracleScorer(), *w.corpus, {10, 20}, w.queries, 10, true);
  for (const auto& row : forced.rows) EXPECT_EQ(row.final_recall, 1.0);

  EXPECT_THROW((void)evaluate_pipeline(pre, OracleScorer(), *w.corpus, {5}, w.queries), std::invalid_argument);
}

TEST(Timing, RepetitionsAndCsv) {
  RandomWorld w(60, 5, 8, 2);
  const FixedEmbeddingPrefetcher pre("random", w.index, w.query_vecs);
  const auto one = bench_timing(pre, ConstantScorer(), *w.corpus, w.queries, {20, 10}, 1);
  ASSERT_EQ(one.rows.size(), 4u);
  for (const auto& r : one.rows) {
    EXPECT_TRUE(std::isnan(r.std_ms));
    EXPECT_GT(r.mean_ms, 0.0);
    EXPECT_EQ(r.repetitions, 1u);
  }
  EXPECT_FALSE(one.host.empty());
  const auto many = bench_timing(pre, ConstantScorer(), *w.corpus, w.queries, {10, 20}, 10);
  for (const auto& r : many.rows) EXPECT_FALSE(std::isnan(r.std_ms));
  std::map<std::string, std::size_t> last;
  for (const auto& r : many.rows) {
    EXPECT_GE(r.k_r, last[r.stage]) << r.stage;
    last[r.stage] = r.k_r;
  }
  EXPECT_EQ(last.size(), 2u);

  const std::string csv = timing_csv(one);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "stage,K_r,mean_ms,std_ms");
  const std::string second = csv.substr(csv.find('\n') + 1);
  EXPECT_EQ(second.substr(second.find('\n') - 1, 1), ",");
}

TEST(FitLine, KnownValues) {
  const auto exact = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(exact.slope, 2.0, 1e-12);
  EXPECT_NEAR(exact.intercept, 1.0, 1e-12);
  EXPECT_NEAR(exact.r2, 1.0, 1e-12);
  // x = 0..3, y = 0,1,1,3: slope 0.9, intercept 1.25 - 0.9 * 1.5.
  const auto f = fit_line({0, 1, 2, 3}, {0, 1, 1, 3});
  EXPECT_NEAR(f.slope, 0.9, 1e-12);
  EXPECT_NEAR(f.intercept, -0.1, 1e-12);
  // sxx = 5, sxy = 4.5, syy = 4.75 -> r^2 = 20.25 / 23.75.
  EXPECT_NEAR(f.r2, 20.25 / 23.75, 1e-12);
  EXPECT_THROW((void)fit_line({1}, {1}), std::invalid_argument);
  EXPECT_THROW((void)fit_line({1, 1}, {1, 2}), std::invalid_argument);
}

TEST(Csv, EvalAndPipelineLayout) {
  const auto e = summarize_ranks({1, 2}, {10});
  EXPECT_EQ(eval_csv(e), "metric,K,value\nmrr,2000,0.75\nrecall,10,1\nqueries,0,2\n");
  PipelineResult p;
  p.rows.push_back({100, 0.5, 0.25, 0.75});
  EXPECT_EQ(pipeline_csv(p),
            "metric,K,value\nfinal_recall@10,100,0.5\nfinal_mrr,100,0.25\nprefetch_recall,100,0.75\n");
  const std::string table = format_pipeline_table(p);
  EXPECT_NE(table.find("100"), std::string::npos);
  const std::string pt = format_prefetch_table({{"BM25", e, 1.5}, {"HAtten", e, 2.0}});
  EXPECT_NE(pt.find("BM25"), std::string::npos);
  EXPECT_NE(pt.find("HAtten"), std::string::npos);
}
