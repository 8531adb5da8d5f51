// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "citerec/evaluation.hpp"
#include "citerec/synthetic.hpp"
#include "citerec/trainer.hpp"

#include "../gradcheck.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace citerec;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
  outcomes.push_back({id, pass, detail});
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void log(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Settings of the scaled-down reproduction.

SyntheticConfig corpus_config() {
  SyntheticConfig c;  // defaults are the acceptance corpus
  c.documents = 500;
  c.clusters = 10;
  c.queries = 1000;
  return c;
}

HAttenConfig prefetcher_config(std::size_t dim) {
  HAttenConfig h;
  h.model_dim = 32;
  h.heads = 4;
  h.ff_dim = 64;
  h.max_paragraph_tokens = 64;
  h.embedding_dim = static_cast<int>(dim);
  return h;
}

PrefetchTrainConfig prefetch_training() {
  PrefetchTrainConfig c;
  c.iterations = 2000;
  c.mining.refresh_period = 250;
  c.mining.candidate_pool = 100;
  c.optimizer.learning_rate = 3e-3;
  c.optimizer.batch_size = 32;
  c.optimizer.margin = 0.5;
  c.seed = 1;
  return c;
}

CrossEncoderConfig reranker_config(std::size_t dim) {
  CrossEncoderConfig c;
  c.model_dim = 32;
  c.heads = 4;
  c.ff_dim = 64;
  c.layers = 2;
  c.max_rerank_tokens = 128;
  c.embedding_dim = static_cast<int>(dim);
  return c;
}

RerankTrainConfig rerank_training() {
  RerankTrainConfig c;
  c.steps = 1000;
  c.candidates = 100;
  c.optimizer.learning_rate = 1e-3;
  c.seed = 1;
  c.log_every = 500;
  return c;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("w" + std::to_string(i));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  nn::Matrix table(30, 6);
  for (nn::Index i = 0; i < table.size(); ++i) table.data()[i] = nd(rng);
  auto vocab = std::make_shared<const Vocabulary>(words, table);

  HAttenConfig hc;
  hc.model_dim = 16;
  hc.heads = 2;
  hc.ff_dim = 24;
  hc.embedding_dim = 6;
  HAttenModel h(hc, vocab, 2);
  const Query q{"q", "", "d1", "w1 w2 CIT w3", "w4 w5", "w6 w7 w8"};
  const auto qi = h.make_query(q);
  const auto pos = h.make_document({"a", "w1 w9", "w2 w10 w11", YearMonth{}});
  const auto neg = h.make_document({"b", "w20 w21", "w22 w23", YearMonth{}});
  const auto hp = h.parameters();
  const auto hr = testing::grad_check(hp, [&](nn::Tape& t) {
    const nn::Var eq = h.encode_query(t, qi);
    return triplet_loss(nn::dot(eq, h.encode_document(t, neg)), nn::dot(eq, h.encode_document(t, pos)), 3.0);
  });

  CrossEncoderConfig cc;
  cc.model_dim = 16;
  cc.heads = 2;
  cc.ff_dim = 24;
  cc.layers = 2;
  cc.max_rerank_tokens = 32;
  cc.embedding_dim = 6;
  CrossEncoder ce(cc, vocab, 5);
  const PaperRecord pp{"a", "w1 w9", "w2 w3", YearMonth{}};
  const PaperRecord np{"b", "w20 w21", "w22", YearMonth{}};
  const auto cp = ce.parameters();
  const auto cr = testing::grad_check(cp, [&](nn::Tape& t) {
    return triplet_loss(ce.forward(t, assemble_input(q, np, 32)), ce.forward(t, assemble_input(q, pp, 32)), 1.0);
  });
  const double secs = seconds_since(t0);
  const bool pass = hr.max_rel_error < 1e-4 && cr.max_rel_error < 1e-4 && secs < 60.0;
  report(1, pass,
         fmt("HAtten %zu entries max rel err %.2e, cross-encoder %zu entries max rel err %.2e, %.1f s",
             hr.entries, hr.max_rel_error, cr.entries, cr.max_rel_error, secs));
}

void criterion2() {
  const std::size_t n = 1000;
  const std::size_t d = 32;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto unit = [&] {
    std::vector<double> v(d);
    double s = 0.0;
    for (double& x : v) {
      x = nd(rng);
      s += x * x;
    }
    for (double& x : v) x /= std::sqrt(s);
    return v;
  };
  std::vector<std::string> ids;
  std::vector<float> rows;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("doc" + std::to_string(i));
    for (double x : unit()) rows.push_back(static_cast<float>(x));
  }
  const EmbeddingIndex index(ids, rows, d, "random");
  bool topk_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = unit();
    std::vector<std::pair<float, std::string>> all;
    for (std::size_t i = 0; i < n; ++i) {
      float s = 0.0F;
      for (std::size_t k = 0; k < d; ++k) s += rows[i * d + k] * static_cast<float>(q[k]);
      all.emplace_back(s, ids[i]);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto got = top_k(index, DocEmbedding{q, true}, 50).ids();
    for (std::size_t i = 0; i < 50; ++i) topk_ok = topk_ok && got[i] == all[i].second;
  }

  // d1 = "a b a c", d2 = "b c", d3 = "a d d d e"; query "a d c".
  const BM25Index bm({"d1", "d2", "d3"}, {{"a", "b", "a", "c"}, {"b", "c"}, {"a", "d", "d", "d", "e"}});
  auto term = [](double n_t, double tf, double len) {
    const double idf = std::log((3.0 - n_t + 0.5) / (n_t + 0.5) + 1.0);
    return idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / (11.0 / 3.0)));
  };
  const double want[3] = {term(2, 2, 4) + term(2, 1, 4), term(2, 1, 2), term(2, 1, 5) + term(1, 3, 5)};
  double bm_err = 0.0;
  for (std::size_t doc = 0; doc < 3; ++doc) {
    bm_err = std::max(bm_err, std::abs(bm25_score(bm, {"a", "d", "c"}, doc) - want[doc]));
  }
  report(2, topk_ok && bm_err < 1e-9,
         fmt("top-50 over 1000 vectors x 20 queries %s sort oracle; BM25 max error %.1e", topk_ok ? "matches" : "differs from",
             bm_err));
}

void criterion3() {
  CandidateList base;
  const std::vector<std::size_t> ranks{1, 4, 10, 11, 0, 2, 150, 2001, 3, 100};
  std::vector<std::size_t> seen;
  for (std::size_t r : ranks) {
    CandidateList c;
    for (std::size_t i = 1; i <= 2100; ++i) {
      c.items.push_back({i == r ? std::string("cited") : "f" + std::to_string(i), -static_cast<double>(i)});
    }
    seen.push_back(c.rank_of("cited"));
  }
  const auto e = summarize_ranks(seen, {10, 100, 200, 500, 1000, 2000});
  const double mrr = (1.86 + 711.0 / 1650.0) / 10.0;
  const bool pass = seen == ranks && std::abs(e.mrr - mrr) < 1e-15 && e.recall_at.at(10) == 0.5 &&
                    e.recall_at.at(100) == 0.7 && e.recall_at.at(200) == 0.8 && e.recall_at.at(2000) == 0.8;
  report(3, pass, fmt("MRR %.15f (hand %.15f), R@10 %.2f R@100 %.2f R@200 %.2f R@2000 %.2f", e.mrr, mrr,
                      e.recall_at.at(10), e.recall_at.at(100), e.recall_at.at(200), e.recall_at.at(2000)));
}

void criterion4() {
  bool ok = std::abs(triplet_loss(0.2, 0.9, 0.1) - 0.0) < 1e-12 && std::abs(triplet_loss(0.5, 0.5, 0.1) - 0.1) < 1e-12 &&
            std::abs(triplet_loss(0.9, 0.3, 0.1) - 0.7) < 1e-12;
  nn::Parameter neg("neg", nn::Matrix::Constant(1, 1, 0.2));
  nn::Parameter pos("pos", nn::Matrix::Constant(1, 1, 0.9));
  nn::Tape t;
  t.backward(triplet_loss(t.param(neg), t.param(pos), 0.1));
  ok = ok && neg.grad(0, 0) == 0.0 && pos.grad(0, 0) == 0.0;
  report(4, ok, fmt("cases 0 / 0.1 / 0.7 exact, hinge-region gradient (%g, %g)", neg.grad(0, 0), pos.grad(0, 0)));
}

// ---------------------------------------------------------------------------

struct Trained {
  SyntheticCorpus syn;
  Corpus corpus;
  std::shared_ptr<const Vocabulary> vocab;
  std::vector<Query> train, val, test;
  std::unique_ptr<HAttenModel> model;
  IndexHandle handle;
  std::unique_ptr<HAttenPrefetcher> prefetcher;
  std::unique_ptr<CrossEncoder> reranker;
};

void criterion5(Trained& w) {
  PrefetchEvalOptions opts;
  opts.ks = {10, 100};
  const HAttenModel untrained(prefetcher_config(w.syn.vectors.cols()), w.vocab, 1);
  IndexHandle untrained_handle;
  rebuild(untrained_handle, untrained, w.corpus, "untrained");
  const auto before = evaluate_prefetcher(HAttenPrefetcher(untrained, untrained_handle), w.test, opts).result;

  w.model = std::make_unique<HAttenModel>(prefetcher_config(w.syn.vectors.cols()), w.vocab, 1);
  const auto cfg = prefetch_training();
  const auto t0 = Clock::now();
  const auto run = train_prefetcher(*w.model, w.corpus, w.train, w.val, cfg, log);
  const double secs = seconds_since(t0);
  rebuild(w.handle, *w.model, w.corpus, "trained");
  w.prefetcher = std::make_unique<HAttenPrefetcher>(*w.model, w.handle);

  const auto hatten = evaluate_prefetcher(*w.prefetcher, w.test, opts);
  const BM25Index bm = BM25Index::build(w.corpus);
  const auto bm25 = evaluate_prefetcher(BM25Prefetcher(bm), w.test, opts);
  const auto mean_index = build_mean_embedding_index(w.corpus, *w.vocab);
  const auto mean = evaluate_prefetcher(MeanEmbeddingPrefetcher(*w.vocab, mean_index), w.test, opts);
  std::cout << format_prefetch_table({{"HAtten", hatten.result, hatten.timing.rows.at(0).mean_ms},
                                      {"BM25", bm25.result, bm25.timing.rows.at(0).mean_ms},
                                      {"MeanEmbedding", mean.result, mean.timing.rows.at(0).mean_ms}});

  const double r10 = hatten.result.recall_at.at(10);
  const double gain = r10 - before.recall_at.at(10);
  const bool pass = run.iterations <= 15000 && secs < 900.0 && r10 >= 0.80 && gain >= 0.30;
  report(5, pass,
         fmt("%zu iterations in %.0f s; test R@10 trained %.3f, untrained %.3f (gain %.3f); BM25 %.3f, mean-embedding %.3f",
             run.iterations, secs, r10, before.recall_at.at(10), gain, bm25.result.recall_at.at(10),
             mean.result.recall_at.at(10)));
}

void criterion8(Trained& w, PipelineResult& trained_pipeline) {
  w.reranker = std::make_unique<CrossEncoder>(reranker_config(w.syn.vectors.cols()), w.vocab, 3);
  const auto cfg = rerank_training();
  const auto t0 = Clock::now();
  (void)train_reranker(*w.reranker, w.corpus, w.train, *w.prefetcher, cfg, log);
  const double secs = seconds_since(t0);
  trained_pipeline = evaluate_pipeline(*w.prefetcher, CrossEncoderScorer(*w.reranker), w.corpus, {10, 50, 100, 200}, w.test);
  std::cout << format_pipeline_table(trained_pipeline);
  PrefetchEvalOptions opts;
  opts.ks = {10};
  const double prefetch10 = evaluate_prefetcher(*w.prefetcher, w.test, opts).result.recall_at.at(10);
  double final10 = 0.0;
  for (const auto& r : trained_pipeline.rows) {
    if (r.k_r == 100) final10 = r.final_recall;
  }
  report(8, final10 >= prefetch10 + 0.05,
         fmt("K_r=100: final R@10 %.3f vs prefetch-only R@10 %.3f (gain %.3f); reranker trained %zu steps in %.0f s",
             final10, prefetch10, final10 - prefetch10, cfg.steps, secs));
}

void criterion6(Trained& w, const PipelineResult& trained) {
  const auto oracle = evaluate_pipeline(*w.prefetcher, OracleScorer(), w.corpus, {10, 50, 100, 200}, w.test);
  bool ok = trained.rows.size() == 4 && oracle.rows.size() == 4;
  std::string detail;
  for (std::size_t i = 0; ok && i < 4; ++i) {
    const auto& t = trained.rows[i];
    const auto& o = oracle.rows[i];
    ok = ok && t.final_recall <= t.prefetch_recall && o.final_recall == o.prefetch_recall;
    detail += fmt("K_r=%zu final %.3f <= prefetch %.3f, oracle %.3f == %.3f; ", t.k_r, t.final_recall,
                  t.prefetch_recall, o.final_recall, o.prefetch_recall);
  }
  report(6, ok, detail);
}

void criterion7() {
  SyntheticConfig sc;
  sc.documents = 100000;
  sc.queries = 200;
  sc.seed = 11;
  const auto syn = make_synthetic_corpus(sc);
  const Corpus corpus(syn.papers, syn.contexts);
  const auto vocab = std::make_shared<const Vocabulary>(syn.vocabulary());
  const HAttenModel model(prefetcher_config(syn.vectors.cols()), vocab, 1);
  IndexHandle handle;
  rebuild(handle, model, corpus, "bench");
  const HAttenPrefetcher prefetcher(model, handle);
  const CrossEncoder ce(reranker_config(syn.vectors.cols()), vocab, 3);
  auto queries = corpus.make_queries(syn.splits[SplitName::Test].context_ids);
  queries.resize(std::min<std::size_t>(queries.size(), 20));
  const auto timing = bench_timing(prefetcher, CrossEncoderScorer(ce), corpus, queries, {100, 250, 500, 1000, 2000}, 3);
  std::vector<double> x;
  std::vector<double> y;
  double pmin = 1e300;
  double pmax = 0.0;
  for (const auto& r : timing.rows) {
    if (r.stage == "rerank") {
      x.push_back(static_cast<double>(r.k_r));
      y.push_back(r.mean_ms);
    } else {
      pmin = std::min(pmin, r.mean_ms);
      pmax = std::max(pmax, r.mean_ms);
    }
  }
  std::cout << timing_csv(timing);
  const auto fit = fit_line(x, y);
  const double spread = (pmax - pmin) / pmin;
  report(7, fit.r2 > 0.95 && spread < 0.20,
         fmt("rerank ms = %.4f * K_r + %.2f, R^2 %.4f; prefetch %.3f..%.3f ms (spread %.1f%%) over %zu docs",
             fit.slope, fit.intercept, fit.r2, pmin, pmax, 100.0 * spread, corpus.size()));
}

// ---------------------------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void criterion9(const std::filesystem::path& scratch) {
  const std::string cli = CITEREC_CLI;
  const auto config = scratch / "e2e.json";
  std::ofstream(config) << R"({
  "hatten": {"d": 16, "n_head": 2, "ff_dim": 32},
  "reranker": {"d": 16, "n_head": 2, "ff_dim": 32, "layers": 1, "max_rerank_tokens": 96},
  "synthetic": {"documents": 80, "clusters": 4, "queries": 160},
  "prefetch_training": {"iterations": 40, "N_iter": 20, "batch_size": 8, "K_n": 20},
  "rerank_training": {"steps": 20, "negatives": 4, "K_r": 20},
  "evaluation": {"k_r": [10, 20, 40]}
})";
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const auto dir = scratch / run;
    std::filesystem::remove_all(dir);
    const std::string c = " --config " + config.string() + " --threads 1 --seed 5";
    const std::string d = " --data " + (dir / "data").string();
    ran = ran && shell(cli + " make-synthetic --out " + (dir / "data").string() + c + " >/dev/null") == 0;
    ran = ran && shell(cli + " train-prefetcher --out " + (dir / "pf").string() + d + c + " >/dev/null") == 0;
    ran = ran && shell(cli + " index --checkpoint " + (dir / "pf/prefetcher.ckpt").string() + " --out " +
                       (dir / "index.bin").string() + d + c + " >/dev/null") == 0;
    ran = ran && shell(cli + " train-reranker --prefetcher " + (dir / "pf/prefetcher.ckpt").string() + " --index " +
                       (dir / "index.bin").string() + " --out " + (dir / "rr").string() + d + c + " >/dev/null") == 0;
    ran = ran && shell(cli + " evaluate --prefetcher " + (dir / "pf/prefetcher.ckpt").string() + " --index " +
                       (dir / "index.bin").string() + " --reranker " + (dir / "rr/reranker.ckpt").string() +
                       " --out " + (dir / "eval").string() + d + c + " >/dev/null") == 0;
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  if (ran) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(scratch / "a")) {
      if (!e.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(e.path(), scratch / "a");
      // Everything but the human-readable table, which reports wall-clock times.
      if (rel.filename() == "table.txt") continue;
      ++compared;
      std::string a = slurp(e.path());
      if (rel.filename().string().ends_with("config.json")) {
        // Recorded configs name the run's own directory.
        const std::string from = (scratch / "a").string();
        const std::string to = (scratch / "b").string();
        for (auto at = a.find(from); at != std::string::npos; at = a.find(from, at + to.size())) {
          a.replace(at, from.size(), to);
        }
      }
      if (a != slurp(scratch / "b" / rel)) differing.push_back(rel.string());
    }
  }
  std::string detail = ran ? fmt("%zu files compared across two runs", compared) : std::string("pipeline failed");
  for (const auto& f : differing) detail += "; differs: " + f;
  report(9, ran && compared > 0 && differing.empty(), detail);
}

void run_training_criteria() {
  Trained w{make_synthetic_corpus(corpus_config()), {}, {}, {}, {}, {}, {}, {}, {}};
  w.corpus = Corpus(w.syn.papers, w.syn.contexts);
  w.vocab = std::make_shared<const Vocabulary>(w.syn.vocabulary());
  w.train = w.corpus.make_queries(w.syn.splits[SplitName::Train].context_ids);
  w.val = w.corpus.make_queries(w.syn.splits[SplitName::Val].context_ids);
  w.test = w.corpus.make_queries(w.syn.splits[SplitName::Test].context_ids);
  log(fmt("synthetic corpus: %zu papers, %zu contexts (train %zu, val %zu, test %zu)", w.corpus.size(),
          w.corpus.contexts().size(), w.train.size(), w.val.size(), w.test.size()));

  criterion5(w);
  PipelineResult trained;
  criterion8(w, trained);
  criterion6(w, trained);
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path scratch = std::filesystem::temp_directory_path() / "citerec_acceptance";
  std::set<int> only;  // --only=7,9 runs a subset
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--only=", 0) == 0) {
      std::stringstream ss(a.substr(7));
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      scratch = a;
    }
  }
  std::filesystem::create_directories(scratch);
  auto want = [&](std::initializer_list<int> ids) {
    if (only.empty()) return true;
    for (int id : ids)
      if (only.count(id) != 0) return true;
    return false;
  };

  if (want({1})) criterion1();
  if (want({2})) criterion2();
  if (want({3})) criterion3();
  if (want({4})) criterion4();

  if (want({5, 6, 8})) run_training_criteria();
  if (want({7})) criterion7();
  if (want({9})) criterion9(scratch);

  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary\n");
  for (const auto& o : outcomes) {
    std::printf("criterion %d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
