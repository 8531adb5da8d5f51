// citerec: command-line front end for dataset building, training, indexing,
// querying, evaluation and benchmarking.

#include "citerec/corpus.hpp"
#include "citerec/evaluation.hpp"
#include "citerec/hatten.hpp"
#include "citerec/reranker.hpp"
#include "citerec/retrieval.hpp"
#include "citerec/synthetic.hpp"
#include "citerec/textprep.hpp"
#include "citerec/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace citerec;

namespace {

constexpr const char* kConfigEnv = "CITEREC_CONFIG";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json default_config() {
  json c;
  c["seed"] = 1;
  c["threads"] = 1;
  c["data"] = {{"dir", ""}, {"papers", ""}, {"embeddings", ""}};
  c["dataset"] = {{"window", 200},
                  {"train_range", "1991-01:2019-12"},
                  {"val_range", "2020-01:2020-02"},
                  {"test_range", "2020-03:2020-04"}};
  c["hatten"] = HAttenConfig{}.to_json();
  c["reranker"] = CrossEncoderConfig{}.to_json();
  auto pt = PrefetchTrainConfig{}.to_json();
  pt.erase("seed");
  c["prefetch_training"] = pt;
  auto rt = RerankTrainConfig{}.to_json();
  rt.erase("seed");
  c["rerank_training"] = rt;
  c["evaluation"] = {{"split", "test"}, {"k_r", {10, 50, 100, 200}}, {"final_k", 10},
                     {"oracle_prefetch", false}, {"baselines", true}};
  c["bench"] = {{"split", "test"}, {"k_r", {100, 250, 500, 1000, 2000}}, {"repetitions", 5}, {"queries", 20}};
  const SyntheticConfig s;
  c["synthetic"] = {{"documents", s.documents},
                    {"clusters", s.clusters},
                    {"queries", s.queries},
                    {"dim", s.dim},
                    {"words_per_cluster", s.words_per_cluster},
                    {"general_words", s.general_words},
                    {"title_words", s.title_words},
                    {"abstract_words", s.abstract_words},
                    {"abstract_cluster_share", s.abstract_cluster_share},
                    {"context_window", s.context_window},
                    {"context_cited_words", s.context_cited_words},
                    {"context_cluster_words", s.context_cluster_words},
                    {"context_general_words", s.context_general_words},
                    {"context_stopwords", s.context_stopwords},
                    {"word_noise", s.word_noise},
                    {"vector_scale", s.vector_scale},
                    {"val_share", s.val_share},
                    {"test_share", s.test_share}};
  return c;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

json parse_list(const std::string& text) {
  json arr = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) arr.push_back(parse_value(item));
  }
  return arr;
}

void set_path(json& root, const std::string& path, json value) {
  json* node = &root;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  if (keys.empty()) throw UsageError("empty config path");
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    json& next = (*node)[keys[i]];
    if (!next.is_object()) next = json::object();
    node = &next;
  }
  (*node)[keys.back()] = std::move(value);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump_config(const fs::path& path, const json& cfg) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, cfg.dump(2) + "\n");
}

std::size_t infer_embedding_dim(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string tok;
    std::size_t fields = 0;
    while (ss >> tok) ++fields;
    if (fields >= 2) return fields - 1;
  }
  throw std::runtime_error(path.string() + ": no embedding rows");
}

/// 64-bit FNV-1a of a file; identifies the checkpoint an index came from.
std::string file_tag(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return path.filename().string() + "@" + buf;
}

struct Data {
  std::shared_ptr<const Vocabulary> vocab;
  Corpus corpus;
  std::array<std::vector<std::string>, 3> splits;
};

fs::path data_dir(const json& cfg) {
  const std::string dir = cfg.at("data").value("dir", std::string{});
  if (!dir.empty()) return dir;
  const std::string papers = cfg.at("data").value("papers", std::string{});
  if (!papers.empty()) return fs::path(papers).parent_path();
  throw UsageError("no data directory (use --data or data.dir in the config)");
}

fs::path papers_path(const json& cfg) {
  const std::string papers = cfg.at("data").value("papers", std::string{});
  return papers.empty() ? data_dir(cfg) / "papers.jsonl" : fs::path(papers);
}

fs::path embeddings_path(const json& cfg) {
  std::string e = cfg.at("data").value("embeddings", std::string{});
  return e.empty() ? data_dir(cfg) / "embeddings.txt" : fs::path(e);
}

Data load_data(const json& cfg, bool with_contexts) {
  Data d;
  const fs::path dir = data_dir(cfg);
  const fs::path emb = embeddings_path(cfg);
  d.vocab = std::make_shared<const Vocabulary>(load_embeddings(emb, infer_embedding_dim(emb)));
  std::optional<fs::path> contexts;
  if (with_contexts) contexts = dir / "contexts.jsonl";
  d.corpus = load_corpus(papers_path(cfg), contexts);
  for (const auto& w : d.corpus.warnings()) std::cerr << "warning: " << w << "\n";
  if (with_contexts) d.splits = read_splits(dir / "splits.json");
  return d;
}

SplitName parse_split(const std::string& s) {
  if (s == "train") return SplitName::Train;
  if (s == "val") return SplitName::Val;
  if (s == "test") return SplitName::Test;
  throw UsageError("unknown split \"" + s + "\" (train, val or test)");
}

std::vector<Query> split_queries(const Data& d, const std::string& split) {
  return d.corpus.make_queries(d.splits[static_cast<std::size_t>(parse_split(split))]);
}

HAttenConfig hatten_config(const json& cfg, const Vocabulary& vocab) {
  json h = cfg.at("hatten");
  h["embedding_dim"] = vocab.dim();
  return HAttenConfig::from_json(h);
}

std::vector<std::size_t> size_list(const json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(v.get<std::size_t>());
  return out;
}

HAttenModel load_prefetcher(const std::string& ckpt, const Data& d) {
  if (ckpt.empty()) throw UsageError("--prefetcher checkpoint is required");
  return HAttenModel::from_checkpoint(ckpt, d.vocab);
}

/// Index from --index if given (checked against the checkpoint), otherwise
/// encoded from the checkpoint.
std::shared_ptr<const EmbeddingIndex> open_index(const std::string& index_path, const std::string& ckpt,
                                                 const HAttenModel& model, const Data& d, unsigned threads) {
  const std::string tag = file_tag(ckpt);
  if (!index_path.empty()) {
    auto idx = std::make_shared<const EmbeddingIndex>(EmbeddingIndex::load(index_path));
    if (idx->checkpoint_tag() != tag) {
      std::cerr << "warning: index " << index_path << " was built from " << idx->checkpoint_tag()
                << ", not " << tag << "\n";
    }
    return idx;
  }
  IndexHandle handle;
  return rebuild(handle, model, d.corpus, tag, threads);
}

struct ScorerBundle {
  std::unique_ptr<CrossEncoder> model;
  std::unique_ptr<Scorer> scorer;
};

ScorerBundle make_scorer(const std::string& kind, const std::string& reranker_ckpt, const std::string& command,
                         const Data& d) {
  ScorerBundle b;
  std::string k = kind;
  if (k.empty()) k = reranker_ckpt.empty() ? "none" : "cross-encoder";
  if (k == "none") return b;
  if (k == "cross-encoder") {
    if (reranker_ckpt.empty()) throw UsageError("--scorer cross-encoder needs --reranker");
    b.model = std::make_unique<CrossEncoder>(CrossEncoder::from_checkpoint(reranker_ckpt, d.vocab));
    b.scorer = std::make_unique<CrossEncoderScorer>(*b.model);
  } else if (k == "oracle") {
    b.scorer = std::make_unique<OracleScorer>();
  } else if (k == "constant") {
    b.scorer = std::make_unique<ConstantScorer>();
  } else if (k == "external") {
    if (command.empty()) throw UsageError("--scorer external needs --scorer-command");
    b.scorer = std::make_unique<ExternalScorer>(command);
  } else {
    throw UsageError("unknown scorer \"" + k + "\" (cross-encoder, oracle, constant, external, none)");
  }
  return b;
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

std::string join_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands.

struct Flags {
  std::string out;
  std::string sources;
  std::string prefetcher;
  std::string reranker;
  std::string index;
  std::string scorer;
  std::string scorer_command;
  std::string local_context;
  std::string title;
  std::string abstract;
  std::string cited_id;
  std::string citing_id;
  std::size_t k = 10;
  std::size_t k_r = 100;
};

int cmd_build_dataset(const json& cfg, const Flags& f) {
  if (f.sources.empty()) throw UsageError("--sources is required");
  if (f.out.empty()) throw UsageError("--out is required");
  const auto& ds = cfg.at("dataset");
  const std::array<DateRange, 3> ranges{DateRange::parse(ds.at("train_range").get<std::string>()),
                                        DateRange::parse(ds.at("val_range").get<std::string>()),
                                        DateRange::parse(ds.at("test_range").get<std::string>())};
  const auto docs = read_source_documents(f.sources);
  const auto built = build_dataset(docs, ds.at("window").get<std::size_t>(), ranges);
  const Corpus check(built.papers, built.contexts);
  const fs::path out = f.out;
  fs::create_directories(out);
  write_text_file(out / "papers.jsonl", serialize_papers(built.papers));
  write_text_file(out / "contexts.jsonl", serialize_contexts(built.contexts));
  write_text_file(out / "splits.json", serialize_splits(built.splits));
  dump_config(out / "effective_config.json", cfg);
  json stats = {{"papers", built.papers.size()},
                {"contexts", built.contexts.size()},
                {"unresolved_citations", built.unresolved_citations},
                {"dropped_out_of_range", built.splits.dropped},
                {"empty_abstracts", check.empty_abstract_count()},
                {"train", built.splits[SplitName::Train].context_ids.size()},
                {"val", built.splits[SplitName::Val].context_ids.size()},
                {"test", built.splits[SplitName::Test].context_ids.size()}};
  std::cout << stats.dump(2) << "\n";
  return 0;
}

int cmd_make_synthetic(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const auto& s = cfg.at("synthetic");
  SyntheticConfig sc;
  sc.documents = s.at("documents");
  sc.clusters = s.at("clusters");
  sc.queries = s.at("queries");
  sc.dim = s.at("dim");
  sc.words_per_cluster = s.at("words_per_cluster");
  sc.general_words = s.at("general_words");
  sc.title_words = s.at("title_words");
  sc.abstract_words = s.at("abstract_words");
  sc.abstract_cluster_share = s.at("abstract_cluster_share");
  sc.context_window = s.at("context_window");
  sc.context_cited_words = s.at("context_cited_words");
  sc.context_cluster_words = s.at("context_cluster_words");
  sc.context_general_words = s.at("context_general_words");
  sc.context_stopwords = s.at("context_stopwords");
  sc.word_noise = s.at("word_noise");
  sc.vector_scale = s.at("vector_scale");
  sc.val_share = s.at("val_share");
  sc.test_share = s.at("test_share");
  sc.seed = cfg.at("seed");
  const auto syn = make_synthetic_corpus(sc);
  write_synthetic_corpus(f.out, syn);
  dump_config(fs::path(f.out) / "effective_config.json", cfg);
  std::cout << "wrote " << syn.papers.size() << " papers, " << syn.contexts.size() << " contexts, "
            << syn.words.size() << " word vectors to " << f.out << "\n";
  return 0;
}

int cmd_train_prefetcher(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const Data d = load_data(cfg, true);
  const fs::path out = f.out;
  fs::create_directories(out);
  dump_config(out / "effective_config.json", cfg);

  json pt = cfg.at("prefetch_training");
  pt["seed"] = cfg.at("seed");
  PrefetchTrainConfig tc = PrefetchTrainConfig::from_json(pt);
  tc.threads = cfg.at("threads");
  tc.output_dir = out / "checkpoints";

  const std::uint64_t seed = cfg.at("seed");
  HAttenModel model(hatten_config(cfg, *d.vocab), d.vocab, seed);
  const auto train = split_queries(d, "train");
  const auto val = split_queries(d, "val");
  const auto result = train_prefetcher(model, d.corpus, train, val, tc, progress);
  write_text_file(out / "metrics.csv", metrics_csv(result.history));
  model.save(out / "prefetcher.ckpt", {{"seed", seed}, {"iterations", result.iterations}});
  std::cout << "wrote " << (out / "prefetcher.ckpt").string() << " after " << result.iterations << " iterations\n";
  return 0;
}

int cmd_train_reranker(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const Data d = load_data(cfg, true);
  const fs::path out = f.out;
  fs::create_directories(out);
  dump_config(out / "effective_config.json", cfg);
  const unsigned threads = cfg.at("threads");

  const HAttenModel prefetch_model = load_prefetcher(f.prefetcher, d);
  IndexHandle handle(open_index(f.index, f.prefetcher, prefetch_model, d, threads));
  const HAttenPrefetcher prefetcher(prefetch_model, handle);

  json rt = cfg.at("rerank_training");
  rt["seed"] = cfg.at("seed");
  RerankTrainConfig rc = RerankTrainConfig::from_json(rt);
  rc.threads = threads;
  json rcfg = cfg.at("reranker");
  rcfg["embedding_dim"] = d.vocab->dim();
  const std::uint64_t seed = cfg.at("seed");
  CrossEncoder model(CrossEncoderConfig::from_json(rcfg), d.vocab, seed);
  const auto train = split_queries(d, "train");
  const auto result = train_reranker(model, d.corpus, train, prefetcher, rc, progress);
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i + 1, result.losses[i]);
    csv += line;
  }
  write_text_file(out / "reranker_loss.csv", csv);
  model.save(out / "reranker.ckpt", {{"seed", seed}, {"steps", rc.steps}});
  std::cout << "wrote " << (out / "reranker.ckpt").string() << " after " << rc.steps << " steps ("
            << result.skipped_queries << " queries skipped)\n";
  return 0;
}

int cmd_index(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const Data d = load_data(cfg, false);
  const HAttenModel model = load_prefetcher(f.prefetcher, d);
  IndexHandle handle;
  const auto idx = rebuild(handle, model, d.corpus, file_tag(f.prefetcher), cfg.at("threads"));
  const fs::path out = f.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  idx->save(out);
  dump_config(fs::path(out.string() + ".config.json"), cfg);
  std::cout << "indexed " << idx->size() << " papers (d=" << idx->dim() << ") into " << out.string() << "\n";
  return 0;
}

int cmd_query(const json& cfg, const Flags& f) {
  if (f.local_context.empty()) throw UsageError("--local-context is required");
  if (f.k == 0) throw UsageError("--k must be at least 1");
  const Data d = load_data(cfg, false);
  const HAttenModel model = load_prefetcher(f.prefetcher, d);
  IndexHandle handle(open_index(f.index, f.prefetcher, model, d, cfg.at("threads")));
  const HAttenPrefetcher prefetcher(model, handle);
  const auto bundle = make_scorer(f.scorer, f.reranker, f.scorer_command, d);

  Query q{"query", f.citing_id, f.cited_id, f.local_context, f.title, f.abstract};
  CandidateList list = prefetcher.prefetch(q, bundle.scorer ? std::max(f.k_r, f.k) : f.k);
  if (bundle.scorer) list = rerank(q, list, *bundle.scorer, d.corpus, f.k);
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < list.size() && i < f.k; ++i) {
    const auto& c = list.items[i];
    nlohmann::ordered_json row;
    row["paper_id"] = c.paper_id;
    row["prefetch_score"] = bundle.scorer ? c.prefetch_score : c.score;
    row["rerank_score"] = bundle.scorer ? nlohmann::ordered_json(c.score) : nlohmann::ordered_json(nullptr);
    row["rank"] = i + 1;
    arr.push_back(row);
  }
  std::cout << arr.dump(2) << "\n";
  if (!f.out.empty()) {
    write_text_file(f.out, arr.dump(2) + "\n");
    dump_config(fs::path(f.out + ".config.json"), cfg);
  }
  return 0;
}

int cmd_evaluate(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const Data d = load_data(cfg, true);
  const unsigned threads = cfg.at("threads");
  const auto& ev = cfg.at("evaluation");
  const auto queries = split_queries(d, ev.at("split").get<std::string>());
  if (queries.empty()) throw UsageError("split has no resolvable queries");
  const bool oracle = ev.at("oracle_prefetch").get<bool>();
  const fs::path out = f.out;
  fs::create_directories(out);
  dump_config(out / "effective_config.json", cfg);

  const auto bundle = make_scorer(f.scorer, f.reranker, f.scorer_command, d);
  PrefetchEvalOptions opts;
  opts.oracle_prefetch = oracle;
  opts.threads = threads;
  std::vector<NamedResult> rows;
  auto run = [&](const Prefetcher& p, const std::string& file) {
    const auto r = evaluate_prefetcher(p, queries, opts);
    write_text_file(out / file, eval_csv(r.result));
    rows.push_back(NamedResult{p.name(), r.result, r.timing.rows.front().mean_ms});
  };

  std::optional<HAttenModel> model;
  IndexHandle handle;
  if (!f.prefetcher.empty()) {
    model.emplace(load_prefetcher(f.prefetcher, d));
    handle.swap(open_index(f.index, f.prefetcher, *model, d, threads));
    run(HAttenPrefetcher(*model, handle), "prefetch_hatten.csv");
  }
  if (ev.at("baselines").get<bool>() || f.prefetcher.empty()) {
    const BM25Index bm25 = BM25Index::build(d.corpus);
    run(BM25Prefetcher(bm25), "prefetch_bm25.csv");
    const EmbeddingIndex mean = build_mean_embedding_index(d.corpus, *d.vocab);
    run(MeanEmbeddingPrefetcher(*d.vocab, mean), "prefetch_mean_embedding.csv");
  }
  std::string table = format_prefetch_table(rows);

  if (bundle.scorer) {
    if (!model) throw UsageError("pipeline evaluation needs --prefetcher");
    const HAttenPrefetcher prefetcher(*model, handle);
    const auto pr = evaluate_pipeline(prefetcher, *bundle.scorer, d.corpus, size_list(ev.at("k_r")), queries,
                                      ev.at("final_k").get<std::size_t>(), oracle, threads);
    write_text_file(out / "pipeline.csv", pipeline_csv(pr));
    table += "\nreranker: " + bundle.scorer->name() + "\n" + format_pipeline_table(pr);
  }
  write_text_file(out / "table.txt", table);
  std::cout << table;
  return 0;
}

int cmd_bench(const json& cfg, const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  const Data d = load_data(cfg, true);
  const auto& b = cfg.at("bench");
  auto queries = split_queries(d, b.at("split").get<std::string>());
  const std::size_t limit = b.at("queries");
  if (limit != 0 && queries.size() > limit) queries.resize(limit);
  if (queries.empty()) throw UsageError("split has no resolvable queries");

  const HAttenModel model = load_prefetcher(f.prefetcher, d);
  IndexHandle handle(open_index(f.index, f.prefetcher, model, d, 1));
  const HAttenPrefetcher prefetcher(model, handle);
  auto bundle = make_scorer(f.scorer, f.reranker, f.scorer_command, d);
  if (!bundle.scorer) throw UsageError("bench needs a scorer (--reranker or --scorer)");

  const auto k_rs = size_list(b.at("k_r"));
  const auto report =
      bench_timing(prefetcher, *bundle.scorer, d.corpus, queries, k_rs, b.at("repetitions").get<std::size_t>());
  const fs::path out = f.out;
  fs::create_directories(out);
  dump_config(out / "effective_config.json", cfg);
  write_text_file(out / "timing.csv", timing_csv(report));

  std::vector<double> x;
  std::vector<double> y;
  std::cout << "host: " << report.host << "\n" << timing_csv(report);
  for (const auto& row : report.rows) {
    if (row.stage == "rerank") {
      x.push_back(static_cast<double>(row.k_r));
      y.push_back(row.mean_ms);
    }
  }
  if (x.size() >= 2) {
    const auto fit = fit_line(x, y);
    std::cout << "rerank ms = " << join_num(fit.slope) << " * K_r + " << join_num(fit.intercept)
              << "  (R^2 " << join_num(fit.r2) << ")\n";
  }
  return 0;
}

std::string error_class(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const CorpusError*>(&e)) return "corpus";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "diverged";
  if (dynamic_cast<const json::exception*>(&e)) return "config";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const std::out_of_range*>(&e)) return "out_of_range";
  if (dynamic_cast<const std::logic_error*>(&e)) return "logic";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"citerec: two-stage local citation recommendation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  Flags f;
  struct Override {
    CLI::Option* opt = nullptr;
    std::string path;
    std::string value;
    bool list = false;
  };
  std::deque<Override> overrides;
  std::vector<std::string> sets;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, std::string("JSON config file (default: $") + kConfigEnv + ")");
    sub->add_option("--set", sets, "Override any config value, e.g. --set hatten.d=64 (repeatable)");
    auto bind = [&overrides, sub](const std::string& name, const std::string& path, const std::string& help,
                                   bool list = false) {
      auto& o = overrides.emplace_back();
      o.path = path;
      o.list = list;
      o.opt = sub->add_option(name, o.value, help);
    };
    bind("--seed", "seed", "Random seed");
    bind("--threads", "threads", "Worker threads (1 = bit-reproducible)");
    return bind;
  };
  auto data_flags = [&](auto& bind) {
    bind("--data", "data.dir", "Directory holding papers.jsonl, contexts.jsonl and splits.json");
    bind("--embeddings", "data.embeddings", "Word-vector file (default: <data>/embeddings.txt)");
  };

  auto* build = app.add_subcommand("build-dataset", "Extract local contexts and date splits from source documents");
  {
    auto bind = common(build);
    build->add_option("--sources", f.sources, "Source documents (JSONL with body and citation spans)")->required();
    build->add_option("--out", f.out, "Output directory")->required();
    bind("--window", "dataset.window", "Local context window in characters");
    bind("--train-range", "dataset.train_range", "YYYY-MM:YYYY-MM");
    bind("--val-range", "dataset.val_range", "YYYY-MM:YYYY-MM");
    bind("--test-range", "dataset.test_range", "YYYY-MM:YYYY-MM");
  }

  auto* synth = app.add_subcommand("make-synthetic", "Write a seeded clustered synthetic corpus");
  {
    auto bind = common(synth);
    synth->add_option("--out", f.out, "Output directory")->required();
    bind("--documents", "synthetic.documents", "Number of papers");
    bind("--clusters", "synthetic.clusters", "Number of vocabulary clusters");
    bind("--queries", "synthetic.queries", "Number of citation contexts");
    bind("--dim", "synthetic.dim", "Word-vector dimension");
  }

  auto* trainp = app.add_subcommand("train-prefetcher", "Train the HAtten prefetcher");
  {
    auto bind = common(trainp);
    data_flags(bind);
    trainp->add_option("--out", f.out, "Output directory")->required();
    bind("--iterations", "prefetch_training.iterations", "Training iterations");
    bind("--refresh", "prefetch_training.N_iter", "Iterations between index refreshes");
    bind("--lr", "prefetch_training.lr", "Learning rate");
    bind("--weight-decay", "prefetch_training.weight_decay", "Decoupled weight decay");
    bind("--margin", "prefetch_training.margin", "Triplet margin");
    bind("--batch-size", "prefetch_training.batch_size", "Queries per batch");
    bind("--kn", "prefetch_training.K_n", "Negative-mining pool size");
  }

  auto* trainr = app.add_subcommand("train-reranker", "Fine-tune the cross-encoder reranker");
  {
    auto bind = common(trainr);
    data_flags(bind);
    trainr->add_option("--prefetcher", f.prefetcher, "HAtten checkpoint")->required();
    trainr->add_option("--index", f.index, "Prebuilt index (default: encode the corpus)");
    trainr->add_option("--out", f.out, "Output directory")->required();
    bind("--steps", "rerank_training.steps", "Optimizer steps");
    bind("--lr", "rerank_training.lr", "Learning rate");
    bind("--weight-decay", "rerank_training.weight_decay", "Decoupled weight decay");
    bind("--margin", "rerank_training.margin", "Triplet margin");
    bind("--negatives", "rerank_training.negatives", "Negatives per query");
    bind("--kr", "rerank_training.K_r", "Candidates the negatives are drawn from");
    bind("--log-every", "rerank_training.log_every", "Steps between progress lines");
  }

  auto* index = app.add_subcommand("index", "Encode the corpus into an embedding index");
  {
    auto bind = common(index);
    data_flags(bind);
    bind("--corpus", "data.papers", "papers.jsonl (default: <data>/papers.jsonl)");
    index->add_option("--prefetcher,--checkpoint", f.prefetcher, "HAtten checkpoint")->required();
    index->add_option("--out", f.out, "Index file")->required();
  }

  auto scorer_flags = [&](CLI::App* sub) {
    sub->add_option("--reranker", f.reranker, "Cross-encoder checkpoint");
    sub->add_option("--scorer", f.scorer, "cross-encoder, oracle, constant, external or none");
    sub->add_option("--scorer-command", f.scorer_command, "Command for the external scorer");
  };

  auto* query = app.add_subcommand("query", "Recommend citations for one local context");
  {
    auto bind = common(query);
    data_flags(bind);
    query->add_option("--prefetcher", f.prefetcher, "HAtten checkpoint")->required();
    query->add_option("--index", f.index, "Prebuilt index");
    scorer_flags(query);
    query->add_option("--local-context", f.local_context, "Text around the citation marker")->required();
    query->add_option("--title", f.title, "Citing paper title");
    query->add_option("--abstract", f.abstract, "Citing paper abstract");
    query->add_option("--k", f.k, "Results to print")->capture_default_str();
    query->add_option("--kr", f.k_r, "Candidates to rerank")->capture_default_str();
    query->add_option("--cited-id", f.cited_id, "Known cited paper (used by the oracle scorer)");
    query->add_option("--citing-id", f.citing_id, "Citing paper id");
    query->add_option("--out", f.out, "Also write the JSON result here");
  }

  auto* evaluate = app.add_subcommand("evaluate", "Prefetch metrics and the reranking sweep");
  {
    auto bind = common(evaluate);
    data_flags(bind);
    evaluate->add_option("--prefetcher", f.prefetcher, "HAtten checkpoint");
    evaluate->add_option("--index", f.index, "Prebuilt index");
    scorer_flags(evaluate);
    evaluate->add_option("--out", f.out, "Output directory")->required();
    bind("--split", "evaluation.split", "train, val or test");
    bind("--kr", "evaluation.k_r", "Comma-separated K_r values", true);
    bind("--baselines", "evaluation.baselines", "Also evaluate BM25 and mean embeddings (true/false)");
    auto* oracle = evaluate->add_flag("--oracle-prefetch", "Force the cited paper into every candidate list");
    overrides.push_back(Override{oracle, "evaluation.oracle_prefetch", "true", false});
  }

  auto* bench = app.add_subcommand("bench", "Time prefetching and reranking over K_r");
  {
    auto bind = common(bench);
    data_flags(bind);
    bench->add_option("--prefetcher", f.prefetcher, "HAtten checkpoint")->required();
    bench->add_option("--index", f.index, "Prebuilt index");
    scorer_flags(bench);
    bench->add_option("--out", f.out, "Output directory")->required();
    bind("--kr", "bench.k_r", "Comma-separated K_r values", true);
    bind("--reps", "bench.repetitions", "Timed repetitions per K_r");
    bind("--queries", "bench.queries", "Queries per repetition (0 = whole split)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json cfg = default_config();
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env != nullptr) config_path = env;
    }
    if (!config_path.empty()) cfg.merge_patch(json::parse(read_file(config_path)));
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got \"" + s + "\"");
      set_path(cfg, s.substr(0, eq), parse_value(s.substr(eq + 1)));
    }
    for (const auto& o : overrides) {
      if (o.opt->count() == 0) continue;
      set_path(cfg, o.path, o.list ? parse_list(o.value) : parse_value(o.value));
    }

    if (*build) return cmd_build_dataset(cfg, f);
    if (*synth) return cmd_make_synthetic(cfg, f);
    if (*trainp) return cmd_train_prefetcher(cfg, f);
    if (*trainr) return cmd_train_reranker(cfg, f);
    if (*index) return cmd_index(cfg, f);
    if (*query) return cmd_query(cfg, f);
    if (*evaluate) return cmd_evaluate(cfg, f);
    if (*bench) return cmd_bench(cfg, f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_class(e) << ": " << e.what() << "\n";
    return dynamic_cast<const UsageError*>(&e) ? 2 : 1;
  }
  return 0;
}
