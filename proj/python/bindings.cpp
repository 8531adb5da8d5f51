// Python bindings: corpus loading, synthetic data, HAtten encoding and
// training, flat and BM25 retrieval, reranking and evaluation.

#include "citerec/corpus.hpp"
#include "citerec/evaluation.hpp"
#include "citerec/hatten.hpp"
#include "citerec/reranker.hpp"
#include "citerec/retrieval.hpp"
#include "citerec/synthetic.hpp"
#include "citerec/textprep.hpp"
#include "citerec/trainer.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace citerec;

namespace {

nlohmann::json to_json(const py::object& obj) {
  if (obj.is_none()) return nlohmann::json::object();
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::array_t<double> as_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

DocEmbedding as_embedding(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d vector");
  DocEmbedding e;
  e.vector.assign(a.data(), a.data() + a.size());
  e.is_normalized = true;
  return e;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict recall;
  for (const auto& [k, v] : r.recall_at) recall[py::int_(k)] = v;
  py::dict d;
  d["mrr"] = r.mrr;
  d["recall"] = recall;
  d["query_count"] = r.query_count;
  d["ranks"] = r.ranks;
  return d;
}

// Prefetchers and scorers that own what they point at, so Python can drop
// its own references freely.
class OwningHAttenPrefetcher final : public Prefetcher {
 public:
  OwningHAttenPrefetcher(std::shared_ptr<const HAttenModel> model, std::shared_ptr<const EmbeddingIndex> index)
      : model_(std::move(model)), handle_(std::move(index)), inner_(*model_, handle_) {}
  [[nodiscard]] std::string name() const override { return inner_.name(); }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override {
    return inner_.prefetch(q, k);
  }
  void swap_index(std::shared_ptr<const EmbeddingIndex> next) { handle_.swap(std::move(next)); }

 private:
  std::shared_ptr<const HAttenModel> model_;
  IndexHandle handle_;
  HAttenPrefetcher inner_;
};

class OwningBM25Prefetcher final : public Prefetcher {
 public:
  explicit OwningBM25Prefetcher(std::shared_ptr<const BM25Index> index)
      : index_(std::move(index)), inner_(*index_) {}
  [[nodiscard]] std::string name() const override { return inner_.name(); }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override {
    return inner_.prefetch(q, k);
  }

 private:
  std::shared_ptr<const BM25Index> index_;
  BM25Prefetcher inner_;
};

class OwningMeanEmbeddingPrefetcher final : public Prefetcher {
 public:
  OwningMeanEmbeddingPrefetcher(std::shared_ptr<const Vocabulary> vocab, const Corpus& corpus)
      : vocab_(std::move(vocab)), index_(build_mean_embedding_index(corpus, *vocab_)), inner_(*vocab_, index_) {}
  [[nodiscard]] std::string name() const override { return inner_.name(); }
  [[nodiscard]] CandidateList prefetch(const Query& q, std::size_t k) const override {
    return inner_.prefetch(q, k);
  }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  EmbeddingIndex index_;
  MeanEmbeddingPrefetcher inner_;
};

class OwningCrossEncoderScorer final : public Scorer {
 public:
  explicit OwningCrossEncoderScorer(std::shared_ptr<const CrossEncoder> model)
      : model_(std::move(model)), inner_(*model_) {}
  [[nodiscard]] std::string name() const override { return inner_.name(); }
  [[nodiscard]] double score(const Query& q, const PaperRecord& c) const override { return inner_.score(q, c); }

 private:
  std::shared_ptr<const CrossEncoder> model_;
  CrossEncoderScorer inner_;
};

ProgressFn wrap_progress(const py::object& fn) {
  if (fn.is_none()) return {};
  return [fn](const std::string& line) {
    py::gil_scoped_acquire gil;
    fn(line);
  };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage local citation recommendation";

  py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("content_tokens", [](const std::string& text) { return content_token_set(text); }, py::arg("text"));
  m.def("extract_local_context",
        [](const std::string& text, std::size_t begin, std::size_t end, std::size_t window) {
          return extract_local_context(text, CharSpan{begin, end}, window);
        },
        py::arg("text"), py::arg("begin"), py::arg("end"), py::arg("window") = 200);

  // ---- records

  py::class_<PaperRecord>(m, "Paper")
      .def(py::init([](std::string id, std::string title, std::string abstract, const std::string& date) {
             return PaperRecord{std::move(id), std::move(title), std::move(abstract), YearMonth::parse(date)};
           }),
           py::arg("paper_id"), py::arg("title"), py::arg("abstract") = "", py::arg("pub_date") = "1970-01")
      .def_readwrite("paper_id", &PaperRecord::paper_id)
      .def_readwrite("title", &PaperRecord::title)
      .def_readwrite("abstract", &PaperRecord::abstract)
      .def_property_readonly("pub_date", [](const PaperRecord& p) { return p.pub_date.str(); })
      .def("__repr__", [](const PaperRecord& p) { return "<Paper " + p.paper_id + ">"; });

  py::class_<ContextRecord>(m, "Context")
      .def_readonly("context_id", &ContextRecord::context_id)
      .def_readonly("citing_id", &ContextRecord::citing_id)
      .def_readonly("cited_id", &ContextRecord::cited_id)
      .def_readonly("local_context", &ContextRecord::local_context)
      .def_property_readonly("context_date", [](const ContextRecord& c) { return c.context_date.str(); });

  py::class_<Query>(m, "Query")
      .def(py::init([](std::string local_context, std::string citing_title, std::string citing_abstract,
                       std::string cited_id, std::string context_id, std::string citing_id) {
             return Query{std::move(context_id), std::move(citing_id),     std::move(cited_id),
                          std::move(local_context), std::move(citing_title), std::move(citing_abstract)};
           }),
           py::arg("local_context"), py::arg("citing_title") = "", py::arg("citing_abstract") = "",
           py::arg("cited_id") = "", py::arg("context_id") = "", py::arg("citing_id") = "")
      .def_readwrite("context_id", &Query::context_id)
      .def_readwrite("citing_id", &Query::citing_id)
      .def_readwrite("cited_id", &Query::cited_id)
      .def_readwrite("local_context", &Query::local_context)
      .def_readwrite("citing_title", &Query::citing_title)
      .def_readwrite("citing_abstract", &Query::citing_abstract);

  py::class_<Vocabulary, std::shared_ptr<Vocabulary>>(m, "Vocabulary")
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("dim", &Vocabulary::dim)
      .def("__contains__", [](const Vocabulary& v, const std::string& w) { return v.lookup(w) != Vocabulary::kUnk; })
      .def("vector", [](const Vocabulary& v, const std::string& w) {
        const auto row = v.vector(v.lookup(w));
        return as_array(std::vector<double>(row.begin(), row.end()));
      });
  m.def("load_embeddings",
        [](const std::filesystem::path& p, std::size_t dim) { return std::make_shared<Vocabulary>(load_embeddings(p, dim)); },
        py::arg("path"), py::arg("dim"));

  py::class_<Corpus, std::shared_ptr<Corpus>>(m, "Corpus")
      .def(py::init([](std::vector<PaperRecord> papers, std::vector<ContextRecord> contexts) {
             return std::make_shared<Corpus>(std::move(papers), std::move(contexts));
           }),
           py::arg("papers"), py::arg("contexts") = std::vector<ContextRecord>{})
      .def("__len__", &Corpus::size)
      .def_property_readonly("papers", &Corpus::papers)
      .def_property_readonly("contexts", &Corpus::contexts)
      .def_property_readonly("warnings", &Corpus::warnings)
      .def("paper", [](const Corpus& c, const std::string& id) -> std::optional<PaperRecord> {
        const auto* p = c.find_paper(id);
        if (p == nullptr) return std::nullopt;
        return *p;
      })
      .def("make_queries", &Corpus::make_queries, py::arg("context_ids"));
  m.def("load_corpus",
        [](const std::filesystem::path& papers, const std::optional<std::filesystem::path>& contexts) {
          return std::make_shared<Corpus>(load_corpus(papers, contexts));
        },
        py::arg("papers"), py::arg("contexts") = std::nullopt);
  m.def("read_splits", &read_splits, py::arg("path"));

  // ---- synthetic data

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("documents", &SyntheticConfig::documents)
      .def_readwrite("clusters", &SyntheticConfig::clusters)
      .def_readwrite("queries", &SyntheticConfig::queries)
      .def_readwrite("dim", &SyntheticConfig::dim)
      .def_readwrite("words_per_cluster", &SyntheticConfig::words_per_cluster)
      .def_readwrite("general_words", &SyntheticConfig::general_words)
      .def_readwrite("title_words", &SyntheticConfig::title_words)
      .def_readwrite("abstract_words", &SyntheticConfig::abstract_words)
      .def_readwrite("abstract_cluster_share", &SyntheticConfig::abstract_cluster_share)
      .def_readwrite("context_window", &SyntheticConfig::context_window)
      .def_readwrite("context_cited_words", &SyntheticConfig::context_cited_words)
      .def_readwrite("context_cluster_words", &SyntheticConfig::context_cluster_words)
      .def_readwrite("context_general_words", &SyntheticConfig::context_general_words)
      .def_readwrite("context_stopwords", &SyntheticConfig::context_stopwords)
      .def_readwrite("word_noise", &SyntheticConfig::word_noise)
      .def_readwrite("vector_scale", &SyntheticConfig::vector_scale)
      .def_readwrite("val_share", &SyntheticConfig::val_share)
      .def_readwrite("test_share", &SyntheticConfig::test_share)
      .def_readwrite("seed", &SyntheticConfig::seed);

  py::class_<SyntheticCorpus>(m, "SyntheticCorpus")
      .def("corpus", [](const SyntheticCorpus& s) { return std::make_shared<Corpus>(s.papers, s.contexts); })
      .def("vocabulary", [](const SyntheticCorpus& s) { return std::make_shared<Vocabulary>(s.vocabulary()); })
      .def("split", [](const SyntheticCorpus& s, const std::string& name) {
        for (const auto& sp : s.splits.splits)
          if (split_name(sp.name) == name) return sp.context_ids;
        throw std::invalid_argument("unknown split: " + name);
      }, py::arg("name"))
      .def_readonly("paper_cluster", &SyntheticCorpus::paper_cluster)
      .def("write", [](const SyntheticCorpus& s, const std::filesystem::path& dir) { write_synthetic_corpus(dir, s); },
           py::arg("dir"));
  m.def("make_synthetic_corpus", &make_synthetic_corpus, py::arg("config"));

  // ---- candidates

  py::class_<Candidate>(m, "Candidate")
      .def_readonly("paper_id", &Candidate::paper_id)
      .def_readonly("score", &Candidate::score)
      .def_readonly("prefetch_score", &Candidate::prefetch_score)
      .def("__repr__", [](const Candidate& c) { return "<Candidate " + c.paper_id + " " + std::to_string(c.score) + ">"; });

  py::class_<CandidateList>(m, "CandidateList")
      .def_readonly("items", &CandidateList::items)
      .def_readonly("clipped", &CandidateList::clipped)
      .def_readonly("degenerate", &CandidateList::degenerate)
      .def("__len__", &CandidateList::size)
      .def("__getitem__", [](const CandidateList& l, std::size_t i) {
        if (i >= l.size()) throw py::index_error();
        return l.items[i];
      })
      .def("ids", &CandidateList::ids)
      .def("rank_of", &CandidateList::rank_of, py::arg("paper_id"));

  m.def("reciprocal_rank", &reciprocal_rank, py::arg("candidates"), py::arg("cited_id"),
        py::arg("cutoff") = kMrrCutoff);
  m.def("recall_at_k", &recall_at_k, py::arg("candidates"), py::arg("cited_id"), py::arg("k"));
  m.def("triplet_loss", py::overload_cast<double, double, double>(&triplet_loss), py::arg("s_neg"),
        py::arg("s_pos"), py::arg("margin"));

  // ---- HAtten

  py::class_<HAttenModel, std::shared_ptr<HAttenModel>>(m, "HAttenModel")
      .def(py::init([](const py::object& config, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed) {
             return std::make_shared<HAttenModel>(HAttenConfig::from_json(to_json(config)), std::move(vocab), seed);
           }),
           py::arg("config"), py::arg("vocabulary"), py::arg("seed") = 1)
      .def_static("from_checkpoint",
                  [](const std::filesystem::path& p, std::shared_ptr<const Vocabulary> vocab) {
                    return std::make_shared<HAttenModel>(HAttenModel::from_checkpoint(p, std::move(vocab)));
                  },
                  py::arg("path"), py::arg("vocabulary"))
      .def_property_readonly("config", [](const HAttenModel& h) { return from_json(h.config().to_json()); })
      .def("save", [](const HAttenModel& h, const std::filesystem::path& p) { h.save(p); }, py::arg("path"))
      .def("embed_query", [](const HAttenModel& h, const Query& q) {
        return as_array(h.embed_query(h.make_query(q)).vector);
      }, py::arg("query"))
      .def("embed_paper", [](const HAttenModel& h, const PaperRecord& p) {
        return as_array(h.embed_document(h.make_document(p)).vector);
      }, py::arg("paper"))
      .def("encode_corpus", [](const HAttenModel& h, const Corpus& c, std::size_t batch, unsigned threads) {
        std::vector<DocEmbedding> rows;
        {
          py::gil_scoped_release nogil;
          rows = encode_corpus(h, c, batch, threads);
        }
        const auto d = static_cast<py::ssize_t>(h.config().model_dim);
        py::array_t<double> out({static_cast<py::ssize_t>(rows.size()), d});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < view.shape(0); ++i)
          for (py::ssize_t k = 0; k < d; ++k) view(i, k) = rows[static_cast<std::size_t>(i)].vector[static_cast<std::size_t>(k)];
        return out;
      }, py::arg("corpus"), py::arg("batch_size") = 32, py::arg("threads") = 1);

  // ---- indexes

  py::class_<EmbeddingIndex, std::shared_ptr<EmbeddingIndex>>(m, "EmbeddingIndex")
      .def_static("build",
                  [](const Corpus& c, const HAttenModel& h, const std::string& tag, unsigned threads) {
                    py::gil_scoped_release nogil;
                    return std::make_shared<EmbeddingIndex>(EmbeddingIndex::build(c, encode_corpus(h, c, 32, threads), tag));
                  },
                  py::arg("corpus"), py::arg("model"), py::arg("checkpoint_tag") = "", py::arg("threads") = 1)
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<EmbeddingIndex>(EmbeddingIndex::load(p)); },
                  py::arg("path"))
      .def("save", &EmbeddingIndex::save, py::arg("path"))
      .def("__len__", &EmbeddingIndex::size)
      .def_property_readonly("dim", &EmbeddingIndex::dim)
      .def_property_readonly("ids", &EmbeddingIndex::ids)
      .def_property_readonly("checkpoint_tag", &EmbeddingIndex::checkpoint_tag)
      .def("top_k", [](const EmbeddingIndex& idx, const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
                       std::size_t k) { return top_k(idx, as_embedding(q), k); },
           py::arg("query"), py::arg("k"));

  py::class_<BM25Index, std::shared_ptr<BM25Index>>(m, "BM25Index")
      .def_static("build", [](const Corpus& c, double k1, double b) { return std::make_shared<BM25Index>(BM25Index::build(c, k1, b)); },
                  py::arg("corpus"), py::arg("k1") = BM25Index::kDefaultK1, py::arg("b") = BM25Index::kDefaultB)
      .def("__len__", &BM25Index::size)
      .def("idf", &BM25Index::idf, py::arg("term"))
      .def("score", [](const BM25Index& idx, const std::string& text, const std::string& id) {
        const auto doc = idx.doc_of(id);
        if (!doc) throw py::key_error(id);
        return bm25_score(idx, tokenize(text), *doc);
      }, py::arg("text"), py::arg("paper_id"))
      .def("top_k", [](const BM25Index& idx, const std::string& text, std::size_t k) {
        return bm25_top_k(idx, tokenize(text), k);
      }, py::arg("text"), py::arg("k"));

  m.def("mean_embedding", [](const std::string& text, const Vocabulary& v) {
    return as_array(mean_embedding_baseline(text, v).vector);
  }, py::arg("text"), py::arg("vocabulary"));

  // ---- prefetchers

  py::class_<Prefetcher, std::shared_ptr<Prefetcher>>(m, "Prefetcher")
      .def_property_readonly("name", &Prefetcher::name)
      .def("prefetch", &Prefetcher::prefetch, py::arg("query"), py::arg("k"));
  py::class_<OwningHAttenPrefetcher, Prefetcher, std::shared_ptr<OwningHAttenPrefetcher>>(m, "HAttenPrefetcher")
      .def(py::init<std::shared_ptr<const HAttenModel>, std::shared_ptr<const EmbeddingIndex>>(), py::arg("model"),
           py::arg("index"))
      .def("swap_index", &OwningHAttenPrefetcher::swap_index, py::arg("index"));
  py::class_<OwningBM25Prefetcher, Prefetcher, std::shared_ptr<OwningBM25Prefetcher>>(m, "BM25Prefetcher")
      .def(py::init<std::shared_ptr<const BM25Index>>(), py::arg("index"));
  py::class_<OwningMeanEmbeddingPrefetcher, Prefetcher, std::shared_ptr<OwningMeanEmbeddingPrefetcher>>(
      m, "MeanEmbeddingPrefetcher")
      .def(py::init<std::shared_ptr<const Vocabulary>, const Corpus&>(), py::arg("vocabulary"), py::arg("corpus"));

  // ---- reranking

  py::class_<CrossEncoder, std::shared_ptr<CrossEncoder>>(m, "CrossEncoder")
      .def(py::init([](const py::object& config, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed) {
             return std::make_shared<CrossEncoder>(CrossEncoderConfig::from_json(to_json(config)), std::move(vocab), seed);
           }),
           py::arg("config"), py::arg("vocabulary"), py::arg("seed") = 1)
      .def_static("from_checkpoint",
                  [](const std::filesystem::path& p, std::shared_ptr<const Vocabulary> vocab) {
                    return std::make_shared<CrossEncoder>(CrossEncoder::from_checkpoint(p, std::move(vocab)));
                  },
                  py::arg("path"), py::arg("vocabulary"))
      .def_property_readonly("config", [](const CrossEncoder& c) { return from_json(c.config().to_json()); })
      .def("save", [](const CrossEncoder& c, const std::filesystem::path& p) { c.save(p); }, py::arg("path"))
      .def("score", [](const CrossEncoder& c, const Query& q, const PaperRecord& p) {
        return c.score(assemble_input(q, p, static_cast<std::size_t>(c.config().max_rerank_tokens)));
      }, py::arg("query"), py::arg("paper"));

  m.def("assemble_input", [](const Query& q, const PaperRecord& p, std::size_t max_tokens) {
    auto in = assemble_input(q, p, max_tokens);
    std::vector<int> seg;
    for (const auto s : in.segments) seg.push_back(static_cast<int>(s));
    return py::make_tuple(in.tokens, seg);
  }, py::arg("query"), py::arg("paper"), py::arg("max_tokens") = 256);

  py::class_<Scorer, std::shared_ptr<Scorer>>(m, "Scorer")
      .def_property_readonly("name", &Scorer::name)
      .def("score", &Scorer::score, py::arg("query"), py::arg("paper"));
  py::class_<OracleScorer, Scorer, std::shared_ptr<OracleScorer>>(m, "OracleScorer").def(py::init<>());
  py::class_<ConstantScorer, Scorer, std::shared_ptr<ConstantScorer>>(m, "ConstantScorer")
      .def(py::init<double>(), py::arg("value") = 0.5);
  py::class_<OwningCrossEncoderScorer, Scorer, std::shared_ptr<OwningCrossEncoderScorer>>(m, "CrossEncoderScorer")
      .def(py::init<std::shared_ptr<const CrossEncoder>>(), py::arg("model"));
  py::class_<ExternalScorer, Scorer, std::shared_ptr<ExternalScorer>>(m, "ExternalScorer")
      .def(py::init<std::string>(), py::arg("command"));

  m.def("rerank", &rerank, py::arg("query"), py::arg("candidates"), py::arg("scorer"), py::arg("corpus"),
        py::arg("top_n") = 10);

  // ---- training

  m.def("train_prefetcher",
        [](HAttenModel& model, const Corpus& corpus, const std::vector<Query>& train,
           const std::vector<Query>& validation, const py::object& config,
           const std::optional<std::filesystem::path>& output_dir, unsigned threads, const py::object& progress) {
          auto cfg = PrefetchTrainConfig::from_json(to_json(config));
          if (output_dir) cfg.output_dir = *output_dir;
          cfg.threads = threads;
          const auto result = train_prefetcher(model, corpus, train, validation, cfg, wrap_progress(progress));
          py::list history;
          for (const auto& r : result.history) {
            py::dict row;
            row["iteration"] = r.iteration;
            row["refresh"] = r.refresh;
            row["loss"] = r.loss;
            row["val_mrr"] = r.val_mrr;
            row["val_r10"] = r.val_recall10;
            row["checkpoint"] = r.checkpoint.string();
            history.append(row);
          }
          return history;
        },
        py::arg("model"), py::arg("corpus"), py::arg("train"), py::arg("validation"), py::arg("config") = py::none(),
        py::arg("output_dir") = std::nullopt, py::arg("threads") = 1, py::arg("progress") = py::none());

  m.def("train_reranker",
        [](CrossEncoder& model, const Corpus& corpus, const std::vector<Query>& train, const Prefetcher& prefetcher,
           const py::object& config, const std::optional<std::filesystem::path>& output_dir, unsigned threads,
           const py::object& progress) {
          auto cfg = RerankTrainConfig::from_json(to_json(config));
          if (output_dir) cfg.output_dir = *output_dir;
          cfg.threads = threads;
          return train_reranker(model, corpus, train, prefetcher, cfg, wrap_progress(progress)).losses;
        },
        py::arg("model"), py::arg("corpus"), py::arg("train"), py::arg("prefetcher"), py::arg("config") = py::none(),
        py::arg("output_dir") = std::nullopt, py::arg("threads") = 1, py::arg("progress") = py::none());

  // ---- evaluation

  m.def("evaluate_prefetcher",
        [](const Prefetcher& p, const std::vector<Query>& queries, std::optional<std::vector<std::size_t>> ks,
           std::size_t mrr_cutoff, bool oracle) {
          PrefetchEvalOptions opts;
          if (ks) opts.ks = *ks;
          opts.mrr_cutoff = mrr_cutoff;
          opts.oracle_prefetch = oracle;
          return eval_dict(evaluate_prefetcher(p, queries, opts).result);
        },
        py::arg("prefetcher"), py::arg("queries"), py::arg("ks") = std::nullopt, py::arg("mrr_cutoff") = kMrrCutoff,
        py::arg("oracle_prefetch") = false);

  m.def("evaluate_pipeline",
        [](const Prefetcher& p, const Scorer& s, const Corpus& c, std::vector<std::size_t> k_rs,
           const std::vector<Query>& queries, std::size_t final_k, bool oracle) {
          const auto r = evaluate_pipeline(p, s, c, std::move(k_rs), queries, final_k, oracle);
          py::list rows;
          for (const auto& row : r.rows) {
            py::dict d;
            d["k_r"] = row.k_r;
            d["final_recall"] = row.final_recall;
            d["final_mrr"] = row.final_mrr;
            d["prefetch_recall"] = row.prefetch_recall;
            rows.append(d);
          }
          return rows;
        },
        py::arg("prefetcher"), py::arg("scorer"), py::arg("corpus"), py::arg("k_rs"), py::arg("queries"),
        py::arg("final_k") = 10, py::arg("oracle_prefetch") = false);
}
