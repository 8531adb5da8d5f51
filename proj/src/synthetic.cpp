#include "citerec/synthetic.hpp"

#include "citerec/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace citerec {

namespace {

constexpr std::array<const char*, 15> kFillers = {"the", "of", "and", "in", "to", "we",   "is", "for",
                                                   "that", "this", "on", "by", "as", "are", "from"};

Eigen::RowVectorXd random_unit(std::size_t dim, nn::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::RowVectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
  return v / v.norm();
}

std::size_t pick(std::size_t n, nn::Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

YearMonth random_train_date(nn::Rng& rng) {
  const auto m = std::uniform_int_distribution<int>(0, 25 * 12 - 1)(rng);
  return YearMonth{1995 + m / 12, 1 + m % 12};
}

YearMonth period_date(int period, nn::Rng& rng) {
  if (period == 0) return random_train_date(rng);
  const int month = (period == 1 ? 1 : 3) + std::uniform_int_distribution<int>(0, 1)(rng);
  return YearMonth{2020, month};
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.documents < 2 || cfg.clusters == 0 || cfg.dim == 0 || cfg.words_per_cluster == 0 ||
      cfg.general_words == 0 || cfg.title_words == 0 || cfg.context_window == 0) {
    throw std::invalid_argument("synthetic corpus: sizes must be positive");
  }
  if (cfg.title_words > cfg.words_per_cluster) {
    throw std::invalid_argument("synthetic corpus: title_words exceeds words_per_cluster");
  }
  nn::Rng rng(cfg.seed);
  SyntheticCorpus out;

  // Vocabulary.
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<std::vector<std::string>> cluster_words(cfg.clusters);
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    const Eigen::RowVectorXd centroid = random_unit(cfg.dim, rng);
    for (std::size_t j = 0; j < cfg.words_per_cluster; ++j) {
      cluster_words[c].push_back("k" + std::to_string(c) + "w" + std::to_string(j));
      out.words.push_back(cluster_words[c].back());
      rows.push_back(centroid + cfg.word_noise * random_unit(cfg.dim, rng));
    }
  }
  std::vector<std::string> general;
  for (std::size_t j = 0; j < cfg.general_words; ++j) {
    general.push_back("g" + std::to_string(j));
    out.words.push_back(general.back());
    rows.push_back(random_unit(cfg.dim, rng));
  }
  for (const char* f : kFillers) {
    out.words.emplace_back(f);
    rows.push_back(0.5 * random_unit(cfg.dim, rng));
  }
  out.words.emplace_back("cit");
  rows.push_back(random_unit(cfg.dim, rng));
  for (auto& r : rows) r *= cfg.vector_scale;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cfg.dim));
  for (std::size_t i = 0; i < rows.size(); ++i) out.vectors.row(static_cast<Eigen::Index>(i)) = rows[i];

  // Papers. Period 0 = train, 1 = validation, 2 = test.
  const auto n_val_docs = static_cast<std::size_t>(std::llround(cfg.val_share * static_cast<double>(cfg.documents)));
  const auto n_test_docs = static_cast<std::size_t>(std::llround(cfg.test_share * static_cast<double>(cfg.documents)));
  if (n_val_docs + n_test_docs >= cfg.documents) throw std::invalid_argument("synthetic corpus: period shares too large");
  std::vector<int> period(cfg.documents, 0);
  std::fill(period.begin(), period.begin() + static_cast<std::ptrdiff_t>(n_val_docs), 1);
  std::fill(period.begin() + static_cast<std::ptrdiff_t>(n_val_docs),
            period.begin() + static_cast<std::ptrdiff_t>(n_val_docs + n_test_docs), 2);
  std::shuffle(period.begin(), period.end(), rng);
  std::array<std::vector<std::size_t>, 3> by_period;

  // Cluster words each paper uses, for building contexts.
  std::vector<std::vector<std::string>> paper_words(cfg.documents);
  for (std::size_t i = 0; i < cfg.documents; ++i) {
    const std::size_t c = i % cfg.clusters;
    out.paper_cluster.push_back(c);
    std::vector<std::string> pool = cluster_words[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> title(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.title_words));
    std::vector<std::string> abstract;
    std::bernoulli_distribution from_cluster(cfg.abstract_cluster_share);
    for (std::size_t k = 0; k < cfg.abstract_words; ++k) {
      if (from_cluster(rng)) {
        abstract.push_back(cluster_words[c][pick(cfg.words_per_cluster, rng)]);
        paper_words[i].push_back(abstract.back());
      } else {
        abstract.push_back(general[pick(general.size(), rng)]);
      }
      if (k % 5 == 4) abstract.emplace_back(kFillers[pick(kFillers.size(), rng)]);
    }
    paper_words[i].insert(paper_words[i].end(), title.begin(), title.end());
    std::sort(paper_words[i].begin(), paper_words[i].end());
    paper_words[i].erase(std::unique(paper_words[i].begin(), paper_words[i].end()), paper_words[i].end());

    char id[32];
    std::snprintf(id, sizeof id, "P%05zu", i);
    std::string abstract_text = join(abstract);
    if (!abstract_text.empty()) abstract_text += ".";
    out.papers.push_back(PaperRecord{id, join(title), abstract_text, period_date(period[i], rng)});
    by_period[static_cast<std::size_t>(period[i])].push_back(i);
  }

  // Queries.
  const auto n_val_q = static_cast<std::size_t>(std::llround(cfg.val_share * static_cast<double>(cfg.queries)));
  const auto n_test_q = static_cast<std::size_t>(std::llround(cfg.test_share * static_cast<double>(cfg.queries)));
  for (std::size_t k = 0; k < cfg.queries; ++k) {
    const int p = k < n_val_q ? 1 : (k < n_val_q + n_test_q ? 2 : 0);
    const auto& citing_pool = by_period[static_cast<std::size_t>(p)].empty() ? by_period[0]
                                                                             : by_period[static_cast<std::size_t>(p)];
    const std::size_t citing = citing_pool[pick(citing_pool.size(), rng)];
    std::size_t cited = pick(cfg.documents - 1, rng);
    if (cited >= citing) ++cited;

    std::vector<std::string> words = paper_words[cited];
    std::shuffle(words.begin(), words.end(), rng);
    if (words.size() > cfg.context_cited_words) words.resize(cfg.context_cited_words);
    const std::size_t c = out.paper_cluster[cited];
    for (std::size_t j = 0; j < cfg.context_cluster_words; ++j) {
      words.push_back(cluster_words[c][pick(cfg.words_per_cluster, rng)]);
    }
    for (std::size_t j = 0; j < cfg.context_general_words; ++j) words.push_back(general[pick(general.size(), rng)]);
    for (std::size_t j = 0; j < cfg.context_stopwords; ++j) words.emplace_back(kFillers[pick(kFillers.size(), rng)]);
    std::shuffle(words.begin(), words.end(), rng);

    const std::size_t split_at = words.size() / 2;
    std::string left;
    for (std::size_t j = 0; j < split_at; ++j) left += words[j] + " ";
    const std::string marker = "[" + std::to_string(k % 97 + 1) + "]";
    std::string text = left + marker;
    for (std::size_t j = split_at; j < words.size(); ++j) text += " " + words[j];
    text += ".";
    const std::string local = extract_local_context(text, CharSpan{left.size(), left.size() + marker.size()},
                                                     cfg.context_window);

    char id[32];
    std::snprintf(id, sizeof id, "C%06zu", k);
    out.contexts.push_back(ContextRecord{id, out.papers[citing].paper_id, out.papers[cited].paper_id, local,
                                         out.papers[citing].pub_date});
  }
  out.splits = build_splits(out.contexts, default_split_ranges());
  return out;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "papers.jsonl", serialize_papers(corpus.papers));
  write_text_file(dir / "contexts.jsonl", serialize_contexts(corpus.contexts));
  write_text_file(dir / "splits.json", serialize_splits(corpus.splits));
  write_embeddings(dir / "embeddings.txt", corpus.vocabulary());
}

}  // namespace citerec
