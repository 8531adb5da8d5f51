#include "citerec/trainer.hpp"

#include "citerec/evaluation.hpp"
#include "citerec/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace citerec {

namespace {

/// Partial Fisher-Yates: the first `count` entries of `items` become a
/// uniform sample without replacement.
template <class T>
void sample_prefix(std::vector<T>& items, std::size_t count, nn::Rng& rng) {
  count = std::min(count, items.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(count);
}

std::string num(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string();
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw TrainingDiverged("loss is not finite (" + num(loss) + ") at " + where);
}

/// Cycles through a shuffled permutation of [0, n), reshuffling each pass.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, nn::Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count && !order_.empty()) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  nn::Rng& rng_;
};

}  // namespace

double triplet_loss(double s_neg, double s_pos, double m) {
  if (!(m > 0.0)) throw std::invalid_argument("triplet_loss: margin must be positive");
  return std::max(s_neg - s_pos + m, 0.0);
}

nn::Var triplet_loss(nn::Var s_neg, nn::Var s_pos, double m) {
  if (!(m > 0.0)) throw std::invalid_argument("triplet_loss: margin must be positive");
  return nn::hinge(nn::add_scalar(nn::sub(s_neg, s_pos), m));
}

std::string_view triplet_source_name(TripletSource s) {
  switch (s) {
    case TripletSource::MinedNegative:
      return "mined_negative";
    case TripletSource::RandomNegative:
      return "random_negative";
    case TripletSource::MinedPositive:
      return "mined_positive";
  }
  return "?";
}

OptimizerConfig OptimizerConfig::prefetch_defaults() { return OptimizerConfig{}; }

OptimizerConfig OptimizerConfig::rerank_defaults() {
  OptimizerConfig c;
  c.learning_rate = 1e-5;
  c.weight_decay = 1e-2;
  c.batch_size = 1;
  return c;
}

nn::AdamConfig OptimizerConfig::adam() const {
  return nn::AdamConfig{learning_rate, beta1, beta2, epsilon, weight_decay};
}

// ---------------------------------------------------------------------------

NegativeSample mine_negatives(const CandidateList& pool, std::string_view cited_id, std::size_t count,
                              nn::Rng& rng) {
  std::vector<std::string> eligible;
  eligible.reserve(pool.size());
  for (const auto& c : pool.items) {
    if (c.paper_id != cited_id) eligible.push_back(c.paper_id);
  }
  NegativeSample out;
  out.short_pool = eligible.size() < count;
  sample_prefix(eligible, count, rng);
  out.ids = std::move(eligible);
  return out;
}

NegativeSample mine_negatives(const Query& q, const Prefetcher& prefetcher, std::size_t k_n, std::size_t count,
                              nn::Rng& rng) {
  return mine_negatives(prefetcher.prefetch(q, k_n), q.cited_id, count, rng);
}

PositiveMiner::PositiveMiner(const Corpus& corpus) : corpus_(corpus) {
  sets_.reserve(corpus.size());
  for (const auto& p : corpus.papers()) sets_.push_back(content_token_set(p.title + " " + p.abstract));
}

std::optional<std::string> PositiveMiner::random_negative(const Query& q, std::string_view positive,
                                                          nn::Rng& rng) const {
  auto excluded = [&](std::string_view id) {
    return id == q.citing_id || id == q.cited_id || (!positive.empty() && id == positive);
  };
  std::unordered_set<std::string_view> blocked;
  for (std::string_view id : {std::string_view(q.citing_id), std::string_view(q.cited_id), positive}) {
    if (!id.empty() && corpus_.find_paper(id) != nullptr) blocked.insert(id);
  }
  if (blocked.size() >= corpus_.size()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, corpus_.size() - 1);
  for (;;) {
    const auto& id = corpus_.papers()[pick(rng)].paper_id;
    if (!excluded(id)) return id;
  }
}

PositiveChoice PositiveMiner::mine(const Query& q, const CandidateList& pool, double threshold,
                                   nn::Rng& rng) const {
  PositiveChoice out;
  const TokenSet query_set = content_token_set(query_text(q));
  double best = -1.0;
  for (const auto& c : pool.items) {
    if (c.paper_id == q.cited_id || c.paper_id == q.citing_id) continue;
    const auto idx = corpus_.paper_index(c.paper_id);
    if (!idx) continue;
    const double j = jaccard(query_set, sets_[*idx]);
    if (j > best) {
      best = j;
      if (j >= threshold) out.positive = c.paper_id;
    }
  }
  if (out.positive) out.jaccard = best;
  out.random_negative = random_negative(q, out.positive.value_or(""), rng);
  return out;
}

std::vector<QueryPool> refresh_pools(const Prefetcher& prefetcher, const std::vector<Query>& queries,
                                     const PositiveMiner& miner, const MiningConfig& cfg, unsigned threads) {
  std::vector<QueryPool> pools(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    pools[i].candidates = prefetcher.prefetch(queries[i], cfg.candidate_pool);
    if (cfg.positive_mining) {
      nn::Rng unused(0);
      pools[i].positive = miner.mine(queries[i], pools[i].candidates, cfg.jaccard_threshold, unused).positive;
    }
  });
  return pools;
}

TripletBatch assemble_prefetch_batch(std::span<const std::size_t> batch, const std::vector<Query>& queries,
                                     const std::vector<QueryPool>& pools, const PositiveMiner& miner,
                                     const MiningConfig& cfg, nn::Rng& rng) {
  TripletBatch out;
  out.queries.assign(batch.begin(), batch.end());
  const Corpus& corpus = miner.corpus();
  for (std::size_t qi : batch) {
    const Query& q = queries.at(qi);
    if (corpus.find_paper(q.cited_id) == nullptr) {
      ++out.skipped;
      continue;
    }
    const QueryPool& pool = pools.at(qi);
    auto neg = mine_negatives(pool.candidates, q.cited_id, cfg.negatives_per_query, rng);
    if (neg.short_pool) ++out.short_pools;
    for (auto& id : neg.ids) out.triplets.push_back(Triplet{qi, q.cited_id, std::move(id), TripletSource::MinedNegative});

    const std::string positive = cfg.positive_mining ? pool.positive.value_or("") : "";
    std::optional<std::string> first_random;
    for (std::size_t r = 0; r < cfg.random_negatives_per_query; ++r) {
      auto rn = miner.random_negative(q, positive, rng);
      if (!rn) break;
      if (!first_random) first_random = *rn;
      out.triplets.push_back(Triplet{qi, q.cited_id, std::move(*rn), TripletSource::RandomNegative});
    }
    if (!positive.empty()) {
      if (!first_random) first_random = miner.random_negative(q, positive, rng);
      if (first_random) {
        out.triplets.push_back(Triplet{qi, positive, *first_random, TripletSource::MinedPositive});
      }
    }
  }
  return out;
}

nn::Var prefetch_batch_loss(nn::Tape& tape, const HAttenModel& model, const TripletBatch& batch,
                            const std::vector<Query>& queries, const Corpus& corpus, double margin) {
  if (batch.triplets.empty()) throw std::invalid_argument("prefetch_batch_loss: batch holds no triplets");
  std::unordered_map<std::size_t, nn::Var> query_vecs;
  std::unordered_map<std::string, nn::Var> doc_vecs;
  auto query_vec = [&](std::size_t qi) {
    auto it = query_vecs.find(qi);
    if (it != query_vecs.end()) return it->second;
    nn::Var v = model.encode_query(tape, model.make_query(queries.at(qi)));
    query_vecs.emplace(qi, v);
    return v;
  };
  auto doc_vec = [&](const std::string& id) {
    auto it = doc_vecs.find(id);
    if (it != doc_vecs.end()) return it->second;
    const PaperRecord* paper = corpus.find_paper(id);
    if (paper == nullptr) throw std::invalid_argument("prefetch_batch_loss: unknown paper " + id);
    nn::Var v = model.encode_document(tape, model.make_document(*paper));
    doc_vecs.emplace(id, v);
    return v;
  };
  std::vector<nn::Var> losses;
  losses.reserve(batch.triplets.size());
  for (const auto& t : batch.triplets) {
    const nn::Var qv = query_vec(t.query);
    const nn::Var s_pos = nn::dot(qv, doc_vec(t.positive));
    const nn::Var s_neg = nn::dot(qv, doc_vec(t.negative));
    losses.push_back(triplet_loss(s_neg, s_pos, margin));
  }
  return nn::mean_scalars(losses);
}

// ---------------------------------------------------------------------------

nlohmann::json PrefetchTrainConfig::to_json() const {
  return {{"K_n", mining.candidate_pool},
          {"negatives_per_query", mining.negatives_per_query},
          {"random_negatives_per_query", mining.random_negatives_per_query},
          {"N_iter", mining.refresh_period},
          {"positive_mining", mining.positive_mining},
          {"jaccard_threshold", mining.jaccard_threshold},
          {"lr", optimizer.learning_rate},
          {"weight_decay", optimizer.weight_decay},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.epsilon},
          {"margin", optimizer.margin},
          {"batch_size", optimizer.batch_size},
          {"iterations", iterations},
          {"seed", seed},
          {"validation_limit", validation_limit}};
}

PrefetchTrainConfig PrefetchTrainConfig::from_json(const nlohmann::json& j) {
  PrefetchTrainConfig c;
  c.mining.candidate_pool = j.value("K_n", c.mining.candidate_pool);
  c.mining.negatives_per_query = j.value("negatives_per_query", c.mining.negatives_per_query);
  c.mining.random_negatives_per_query = j.value("random_negatives_per_query", c.mining.random_negatives_per_query);
  c.mining.refresh_period = j.value("N_iter", c.mining.refresh_period);
  c.mining.positive_mining = j.value("positive_mining", c.mining.positive_mining);
  c.mining.jaccard_threshold = j.value("jaccard_threshold", c.mining.jaccard_threshold);
  c.optimizer.learning_rate = j.value("lr", c.optimizer.learning_rate);
  c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("eps", c.optimizer.epsilon);
  c.optimizer.margin = j.value("margin", c.optimizer.margin);
  c.optimizer.batch_size = j.value("batch_size", c.optimizer.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.validation_limit = j.value("validation_limit", c.validation_limit);
  if (c.mining.refresh_period == 0) throw std::invalid_argument("training config: N_iter must be positive");
  if (c.mining.candidate_pool == 0) throw std::invalid_argument("training config: K_n must be positive");
  if (c.optimizer.batch_size == 0) throw std::invalid_argument("training config: batch_size must be positive");
  if (!(c.optimizer.margin > 0.0)) throw std::invalid_argument("training config: margin must be positive");
  return c;
}

std::string metrics_csv(const std::vector<RefreshRecord>& history) {
  std::string out = "iteration,loss,val_mrr,val_r10,refresh\n";
  for (const auto& r : history) {
    out += std::to_string(r.iteration) + "," + num(r.loss) + "," + num(r.val_mrr) + "," + num(r.val_recall10) +
           "," + std::to_string(r.refresh) + "\n";
  }
  return out;
}

PrefetchTrainResult train_prefetcher(HAttenModel& model, const Corpus& corpus, const std::vector<Query>& train,
                                     const std::vector<Query>& validation, const PrefetchTrainConfig& cfg,
                                     const ProgressFn& progress) {
  if (train.empty()) throw std::invalid_argument("train_prefetcher: no training queries");
  if (cfg.mining.refresh_period == 0) throw std::invalid_argument("train_prefetcher: N_iter must be positive");
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  if (!cfg.output_dir.empty()) std::filesystem::create_directories(cfg.output_dir);

  nn::Rng rng(cfg.seed);
  IndexHandle handle;
  rebuild(handle, model, corpus, "iter0", cfg.threads);
  const HAttenPrefetcher prefetcher(model, handle);
  const PositiveMiner miner(corpus);
  auto pools = refresh_pools(prefetcher, train, miner, cfg.mining, cfg.threads);

  std::vector<Query> val = validation;
  if (cfg.validation_limit != 0 && val.size() > cfg.validation_limit) val.resize(cfg.validation_limit);
  PrefetchEvalOptions eval_opts;
  eval_opts.ks = {10};
  eval_opts.threads = cfg.threads;

  PrefetchTrainResult result;
  auto record = [&](std::size_t it, std::size_t refresh, double loss, std::filesystem::path ckpt) {
    RefreshRecord r{it, refresh, loss, 0.0, 0.0, std::move(ckpt)};
    if (!val.empty()) {
      const auto ev = evaluate_prefetcher(prefetcher, val, eval_opts).result;
      r.val_mrr = ev.mrr;
      r.val_recall10 = ev.recall_at.at(10);
    }
    result.history.push_back(r);
    if (!cfg.output_dir.empty()) write_text_file(cfg.output_dir / "metrics.csv", metrics_csv(result.history));
    char line[160];
    std::snprintf(line, sizeof line, "iter %zu refresh %zu loss %s val MRR %.4f R@10 %.4f", it, refresh,
                  num(loss).c_str(), r.val_mrr, r.val_recall10);
    say(line);
  };
  record(0, 0, std::numeric_limits<double>::quiet_NaN(), {});

  nn::Adam adam(model.parameters(), cfg.optimizer.adam());
  EpochSampler sampler(train.size(), rng);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t refreshes = 0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto batch_ids = sampler.next(cfg.optimizer.batch_size);
    const auto batch = assemble_prefetch_batch(batch_ids, train, pools, miner, cfg.mining, rng);
    result.skipped_queries += batch.skipped;
    if (!batch.triplets.empty()) {
      nn::Tape tape;
      const nn::Var loss = prefetch_batch_loss(tape, model, batch, train, corpus, cfg.optimizer.margin);
      const double value = loss.scalar();
      check_finite(value, "iteration " + std::to_string(it));
      tape.backward(loss);
      adam.step();
      loss_sum += value;
      ++loss_count;
    }
    if (it % cfg.mining.refresh_period == 0) {
      ++refreshes;
      const std::string tag = "iter" + std::to_string(it);
      std::filesystem::path ckpt;
      if (!cfg.output_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "prefetcher_iter%06zu.ckpt", it);
        ckpt = cfg.output_dir / name;
        model.save(ckpt, {{"iteration", it}, {"refresh", refreshes}, {"seed", cfg.seed}});
      }
      rebuild(handle, model, corpus, tag, cfg.threads);
      pools = refresh_pools(prefetcher, train, miner, cfg.mining, cfg.threads);
      const double mean_loss =
          loss_count == 0 ? std::numeric_limits<double>::quiet_NaN() : loss_sum / static_cast<double>(loss_count);
      record(it, refreshes, mean_loss, ckpt);
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  result.iterations = cfg.iterations;
  return result;
}

// ---------------------------------------------------------------------------

nlohmann::json RerankTrainConfig::to_json() const {
  return {{"lr", optimizer.learning_rate},
          {"weight_decay", optimizer.weight_decay},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.epsilon},
          {"margin", optimizer.margin},
          {"batch_size", optimizer.batch_size},
          {"negatives", negatives},
          {"K_r", candidates},
          {"steps", steps},
          {"seed", seed},
          {"log_every", log_every}};
}

RerankTrainConfig RerankTrainConfig::from_json(const nlohmann::json& j) {
  RerankTrainConfig c;
  c.optimizer.learning_rate = j.value("lr", c.optimizer.learning_rate);
  c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("eps", c.optimizer.epsilon);
  c.optimizer.margin = j.value("margin", c.optimizer.margin);
  c.optimizer.batch_size = j.value("batch_size", c.optimizer.batch_size);
  c.negatives = j.value("negatives", c.negatives);
  c.candidates = j.value("K_r", c.candidates);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  if (c.negatives == 0 || c.candidates == 0) {
    throw std::invalid_argument("reranker config: negatives and K_r must be positive");
  }
  if (c.optimizer.batch_size == 0) throw std::invalid_argument("reranker config: batch_size must be positive");
  if (!(c.optimizer.margin > 0.0)) throw std::invalid_argument("reranker config: margin must be positive");
  return c;
}

double reranker_batch_loss(const Scorer& scorer, const Query& q, const PaperRecord& cited,
                           const std::vector<const PaperRecord*>& negatives, double margin) {
  if (negatives.empty()) throw std::invalid_argument("reranker_batch_loss: no negatives");
  const double s_pos = scorer.score(q, cited);
  double total = 0.0;
  for (const PaperRecord* neg : negatives) total += triplet_loss(scorer.score(q, *neg), s_pos, margin);
  return total / static_cast<double>(negatives.size());
}

nn::Var reranker_batch_loss(nn::Tape& tape, const CrossEncoder& model, const Query& q, const PaperRecord& cited,
                            const std::vector<const PaperRecord*>& negatives, double margin) {
  if (negatives.empty()) throw std::invalid_argument("reranker_batch_loss: no negatives");
  const auto max_tokens = static_cast<std::size_t>(model.config().max_rerank_tokens);
  const nn::Var s_pos = model.forward(tape, assemble_input(q, cited, max_tokens));
  std::vector<nn::Var> losses;
  losses.reserve(negatives.size());
  for (const PaperRecord* neg : negatives) {
    losses.push_back(triplet_loss(model.forward(tape, assemble_input(q, *neg, max_tokens)), s_pos, margin));
  }
  return nn::mean_scalars(losses);
}

RerankTrainResult train_reranker(CrossEncoder& model, const Corpus& corpus, const std::vector<Query>& train,
                                 const Prefetcher& prefetcher, const RerankTrainConfig& cfg,
                                 const ProgressFn& progress) {
  RerankTrainResult result;
  // Non-cited candidate pools, as corpus row indices.
  std::vector<std::vector<std::uint32_t>> pools(train.size());
  std::vector<char> usable(train.size(), 0);
  parallel_for(train.size(), cfg.threads, [&](std::size_t i) {
    const Query& q = train[i];
    if (corpus.find_paper(q.cited_id) == nullptr) return;
    const CandidateList list = prefetcher.prefetch(q, cfg.candidates);
    for (const auto& c : list.items) {
      if (c.paper_id == q.cited_id) continue;
      if (auto idx = corpus.paper_index(c.paper_id)) pools[i].push_back(static_cast<std::uint32_t>(*idx));
    }
    usable[i] = pools[i].empty() ? 0 : 1;
  });
  std::vector<Query> queries;
  std::vector<std::vector<std::uint32_t>> kept;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (usable[i] != 0) {
      queries.push_back(train[i]);
      kept.push_back(std::move(pools[i]));
    } else {
      ++result.skipped_queries;
    }
  }
  if (queries.empty()) throw std::invalid_argument("train_reranker: no usable training queries");

  nn::Rng rng(cfg.seed);
  EpochSampler sampler(queries.size(), rng);
  nn::Adam adam(model.parameters(), cfg.optimizer.adam());
  double window = 0.0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto ids = sampler.next(cfg.optimizer.batch_size);
    nn::Tape tape;
    std::vector<nn::Var> per_query;
    for (std::size_t qi : ids) {
      auto pool = kept[qi];
      sample_prefix(pool, cfg.negatives, rng);
      std::vector<const PaperRecord*> negatives;
      negatives.reserve(pool.size());
      for (auto idx : pool) negatives.push_back(&corpus.papers()[idx]);
      per_query.push_back(reranker_batch_loss(tape, model, queries[qi], *corpus.find_paper(queries[qi].cited_id),
                                              negatives, cfg.optimizer.margin));
    }
    const nn::Var loss = nn::mean_scalars(per_query);
    const double value = loss.scalar();
    check_finite(value, "reranker step " + std::to_string(step));
    tape.backward(loss);
    adam.step();
    result.losses.push_back(value);
    window += value;
    if (progress && cfg.log_every != 0 && step % cfg.log_every == 0) {
      char line[96];
      std::snprintf(line, sizeof line, "step %zu mean loss %.6f", step, window / static_cast<double>(cfg.log_every));
      progress(line);
      window = 0.0;
    }
  }
  return result;
}

}  // namespace citerec
